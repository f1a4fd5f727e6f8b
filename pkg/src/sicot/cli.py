"""Command-line entry point: ``sicot {synth,train,eval,gradcheck,attn,config}``.

Every command reads the flat run config (``--config``, ``--set key=value``, ``--seed``),
writes UTF-8 text outputs stamped with the code version and the resolved config, and
reports failures as a single ``sicot: <prefix>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attention import attend
from .autodiff import gather_rows, no_grad
from .config import RunConfig, config_lines, describe, load_config
from .errors import DimensionError, EmptyTitleError, SicotError
from .evaluation import render_report
from .gradcheck import render as render_gradcheck
from .gradcheck import run_all
from .model import fit, load_checkpoint, save_checkpoint
from .pipeline import build_model, evaluate_model, prepare
from .synth import generate, read_manifest, shared_vocab_fraction, write_manifest
from .text import Vocab, tokenize

EXIT_FAIL = 1
EXIT_ERROR = 2


def provenance(cfg: RunConfig) -> list:
    return [f"code-version {__version__}"] + ["config " + line for line in config_lines(cfg)]


def _write(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")


def cmd_synth(cfg: RunConfig, out=sys.stdout) -> int:
    manifest, state = generate(cfg.spec())
    manifest.comments = provenance(cfg)
    write_manifest(manifest, cfg.manifest)
    if cfg.embeddings:
        state.write_embeddings(cfg.embeddings)
    counts = manifest.train_counts()
    shared = shared_vocab_fraction(manifest, cfg.head_tail_threshold)
    out.write(
        f"wrote {cfg.manifest}: {len(manifest.records)} records, {manifest.num_classes} classes, "
        f"train counts {counts[0]}..{counts[-1]}, shared vocabulary {shared:.4f}\n"
    )
    return 0


def cmd_train(cfg: RunConfig, out=sys.stdout) -> int:
    manifest = read_manifest(cfg.manifest)
    settings = cfg.settings()
    vocab, data = prepare(manifest, settings.drop_fraction)
    model = build_model(manifest, vocab, settings)
    lines = ["#sicot-train-log v1"] + ["#" + p for p in provenance(cfg)]
    lines.append(
        f"#data records={len(data)} vocab={len(vocab)} random_embedding_rows={model.embeddings.random_rows}"
    )

    def log(stats):
        lines.append(
            f"epoch={stats.epoch} lr={stats.learning_rate!r} batches={stats.batches} total={stats.total!r} "
            f"visual={stats.visual_term!r} mixed={stats.mixed_term!r}"
        )
        out.write(f"epoch {stats.epoch}: loss {stats.total:.6f}\n")

    fit(data, model, settings.sgd(), settings.epochs, settings.seed, settings.lam, settings.visual_only,
        settings.workers, log=log)
    save_checkpoint(model, cfg.checkpoint)
    vocab.save(cfg.vocab)
    _write(cfg.log, "\n".join(lines) + "\n")
    out.write(f"wrote {cfg.checkpoint}, {cfg.vocab} and {cfg.log}\n")
    return 0


def cmd_eval(cfg: RunConfig, out=sys.stdout) -> int:
    model = load_checkpoint(cfg.checkpoint)
    manifest = read_manifest(cfg.manifest)
    if model.config.input_dim != manifest.dim:
        raise DimensionError(f"checkpoint expects {model.config.input_dim} features, manifest has {manifest.dim}")
    if model.config.num_classes != manifest.num_classes:
        raise DimensionError(
            f"checkpoint has {model.config.num_classes} classes, manifest has {manifest.num_classes}"
        )
    report = evaluate_model(model, manifest, cfg.head_tail_threshold)
    text = render_report(report, ["#sicot-report v1"] + ["#" + p for p in provenance(cfg)])
    _write(cfg.report, text)
    out.write(text[text.index("micro_top1="):])
    return 0


def cmd_gradcheck(cfg: RunConfig, out=sys.stdout) -> int:
    results = run_all(cfg.seed)
    body = render_gradcheck(results)
    _write(cfg.gradcheck_report, "".join("#" + p + "\n" for p in provenance(cfg)) + body)
    out.write(body)
    return 0 if all(r.passed for r in results.values()) else EXIT_FAIL


def attention_listing(model, vocab: Vocab, title: str) -> tuple:
    """``([(word, alpha), ...] sorted by descending alpha, [out-of-vocabulary words])``."""
    words = tokenize(title)
    kept = [(w, vocab.index(w)) for w in words]
    oov = [w for w, i in kept if i is None]
    kept = [(w, i) for w, i in kept if i is not None]
    if not kept:
        raise EmptyTitleError(f"no in-vocabulary words in title {title!r}")
    with no_grad():
        W = gather_rows(model.embeddings.weight, np.array([i for _, i in kept]))
        alpha = attend(W, model.semantic).alpha.data
    order = sorted(range(len(kept)), key=lambda j: (-alpha[j], j))
    return [(kept[j][0], float(alpha[j])) for j in order], oov


def cmd_attn(cfg: RunConfig, title: str, out=sys.stdout, err=sys.stderr) -> int:
    model = load_checkpoint(cfg.checkpoint)
    vocab = Vocab.load(cfg.vocab)
    if len(vocab) != len(model.embeddings):
        raise DimensionError(f"vocabulary has {len(vocab)} words, checkpoint has {len(model.embeddings)} rows")
    listing, oov = attention_listing(model, vocab, title)
    for word, a in listing:
        out.write(f"{word}\t{a!r}\n")
    if oov:
        err.write("skipped (not in vocabulary): " + " ".join(oov) + "\n")
    return 0


def cmd_config(cfg: RunConfig, out=sys.stdout) -> int:
    out.write("\n".join(config_lines(cfg)) + "\n")
    return 0


class UsageError(SicotError):
    prefix = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    parser = _Parser(
        prog="sicot",
        description="Long-tailed classification with title side information.",
        epilog="config keys and defaults:\n" + describe(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"sicot {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="generate a long-tailed dataset and word vectors")
    sub.add_parser("train", parents=[common], help="train and write checkpoint, vocabulary and log")
    sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on the test split")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every operation")
    attn = sub.add_parser("attn", parents=[common], help="per-word attention for one title")
    attn.add_argument("title")
    sub.add_parser("config", parents=[common], help="print the resolved config")
    return parser


def _one_line(msg) -> str:
    return " ".join(str(msg).split())


def main(argv=None, out=None, err=None) -> int:
    out = out if out is not None else sys.stdout
    err = err if err is not None else sys.stderr
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as e:
            # --help and --version
            return 0 if e.code in (0, None) else EXIT_ERROR
        cfg = load_config(args.config, args.set, args.seed)
        if args.command == "synth":
            return cmd_synth(cfg, out)
        if args.command == "train":
            return cmd_train(cfg, out)
        if args.command == "eval":
            return cmd_eval(cfg, out)
        if args.command == "gradcheck":
            return cmd_gradcheck(cfg, out)
        if args.command == "attn":
            return cmd_attn(cfg, args.title, out, err)
        return cmd_config(cfg, out)
    except SicotError as e:
        err.write(f"sicot: {e.prefix}: {_one_line(e)}\n")
    except FileNotFoundError as e:
        err.write(f"sicot: missing-file: {_one_line(e)}\n")
    except ValueError as e:
        err.write(f"sicot: invalid: {_one_line(e)}\n")
    except OSError as e:
        err.write(f"sicot: io: {_one_line(e)}\n")
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
