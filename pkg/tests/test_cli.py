import io

import pytest

from sicot.cli import main
from sicot.config import RunConfig, config_lines, load_config
from sicot.errors import ConfigError
from sicot.evaluation import REPORT_KEYS, parse_report

SMALL = """\
# tiny desk-scale run
num_classes=10
n_max=60
imbalance_factor=10
head_tail_threshold=20
test_per_class=5
noise_vocab=4
shared_fraction=0.2
dim=8
hidden_dims=8
epochs=2
batch_size=32
"""


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    (tmp_path / "small.cfg").write_text(SMALL)
    return tmp_path


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main(list(argv), out=out, err=err)
    return code, out.getvalue(), err.getvalue()


def ok(*argv):
    code, out, err = run(*argv)
    assert code == 0, err
    return out


def test_pipeline_produces_all_report_keys(workdir):
    ok("synth", "--config", "small.cfg")
    ok("train", "--config", "small.cfg")
    out = ok("eval", "--config", "small.cfg")
    report = (workdir / "report.txt").read_text()
    parsed = parse_report(report)
    assert list(parsed) == list(REPORT_KEYS)
    assert all(0.0 <= v <= 100.0 for v in parsed.values())
    assert "#code-version" in report and "#config lambda=1.0" in report
    assert "micro_top1=" in out


def test_outputs_embed_config(workdir):
    ok("synth", "--config", "small.cfg", "--seed", "3")
    ok("train", "--config", "small.cfg", "--seed", "3")
    for name in ("manifest.tsv", "train.log"):
        text = (workdir / name).read_text()
        assert "config seed=3" in text and "code-version" in text
    assert "#code-version" in (workdir / "model.ckpt").read_text()


def test_lambda_zero_and_baseline_checkpoints_identical(workdir):
    ok("synth", "--config", "small.cfg")
    ok("train", "--config", "small.cfg", "--set", "lambda=0", "--set", "checkpoint=a.ckpt")
    ok("train", "--config", "small.cfg", "--set", "baseline=true", "--set", "checkpoint=b.ckpt")
    assert (workdir / "a.ckpt").read_bytes() == (workdir / "b.ckpt").read_bytes()


def test_attn_lists_words_by_descending_alpha(workdir):
    ok("synth", "--config", "small.cfg")
    ok("train", "--config", "small.cfg")
    words = [ln.split("\t")[0] for ln in (workdir / "vocab.tsv").read_text().splitlines()]
    out = ok("attn", "--config", "small.cfg", f"{words[0]} {words[-1]}")
    rows = [ln.split("\t") for ln in out.splitlines()]
    assert sorted(w for w, _ in rows) == sorted([words[0], words[-1]])
    alphas = [float(a) for _, a in rows]
    assert alphas == sorted(alphas, reverse=True)
    assert sum(alphas) == pytest.approx(1.0, abs=1e-12)


def test_attn_reports_skipped_words(workdir):
    ok("synth", "--config", "small.cfg")
    ok("train", "--config", "small.cfg")
    word = (workdir / "vocab.tsv").read_text().split("\t")[0]
    code, out, err = run("attn", "--config", "small.cfg", f"{word} notaword")
    assert code == 0 and out.startswith(word + "\t1.0") and "notaword" in err


def test_gradcheck_command(workdir):
    out = ok("gradcheck")
    assert out.splitlines()[-1] == "overall\tPASS"
    assert "cotrain_objective\tPASS" in (workdir / "gradcheck.txt").read_text()


def test_pipeline_is_byte_deterministic(workdir):
    outputs = []
    for tag in ("a", "b"):
        paths = [f"--set=manifest={tag}.tsv", f"--set=embeddings={tag}.emb", f"--set=checkpoint={tag}.ckpt",
                 f"--set=log={tag}.log", f"--set=report={tag}.txt", f"--set=vocab={tag}.vocab"]
        for cmd in ("synth", "train", "eval"):
            ok(cmd, "--config", "small.cfg", "--set", "workers=3", *paths)
        outputs.append([(workdir / f"{tag}.{ext}").read_bytes() for ext in ("emb", "ckpt", "vocab")])
        # the manifest, log and report embed their own output paths; compare without those lines
        outputs[-1] += [
            "\n".join(ln for ln in (workdir / f"{tag}.{ext}").read_text().splitlines()
                      if not ln.startswith(("#config manifest=", "#config embeddings=", "#config checkpoint=",
                                            "#config log=", "#config report=", "#config vocab=")))
            for ext in ("tsv", "log", "txt")
        ]
    assert outputs[0] == outputs[1]


@pytest.mark.parametrize(
    "argv,prefix",
    [
        (("train", "--set", "bogus=1"), "config"),
        (("train", "--set", "epochs=many"), "config"),
        (("train", "--set", "mode=lstm"), "config"),
        (("train", "--set", "noequals"), "config"),
        (("eval", "--set", "checkpoint=absent.ckpt"), "missing-file"),
        (("train", "--set", "manifest=absent.tsv"), "missing-file"),
        (("synth", "--config", "absent.cfg"), "missing-file"),
        (("frobnicate",), "usage"),
        (("synth", "--set", "shared_fraction=0.001"), "invalid"),
    ],
)
def test_errors_are_one_line_with_prefix(workdir, argv, prefix):
    code, out, err = run(*argv)
    assert code != 0
    assert err.count("\n") == 1 and err.startswith(f"sicot: {prefix}: ")


def test_dimension_mismatch_prefix(workdir):
    ok("synth", "--config", "small.cfg")
    code, _, err = run("train", "--config", "small.cfg", "--set", "dim=6")
    assert code != 0 and err.startswith("sicot: dimension: ")
    ok("train", "--config", "small.cfg")
    code, _, err = run("eval", "--config", "small.cfg", "--set", "manifest=other.tsv")
    assert err.startswith("sicot: missing-file: ")
    ok("synth", "--config", "small.cfg", "--set", "feature_dim=5", "--set", "manifest=other.tsv",
       "--set", "embeddings=")
    code, _, err = run("eval", "--config", "small.cfg", "--set", "manifest=other.tsv")
    assert code != 0 and err.startswith("sicot: dimension: ")


def test_empty_title_prefix(workdir):
    ok("synth", "--config", "small.cfg")
    ok("train", "--config", "small.cfg")
    code, _, err = run("attn", "--config", "small.cfg", "!!!")
    assert code != 0 and err.startswith("sicot: empty-title: ")


def test_config_precedence_and_echo(workdir):
    (workdir / "c.cfg").write_text("epochs=3\nepochs=4\nlambda=0.5\n")
    cfg = load_config(workdir / "c.cfg", ["epochs=7"], seed=9)
    assert (cfg.epochs, cfg.lam, cfg.seed) == (7, 0.5, 9)
    (workdir / "echo.cfg").write_text("\n".join(config_lines(cfg)) + "\n")
    assert load_config(workdir / "echo.cfg") == cfg
    assert ok("config", "--config", "c.cfg").splitlines() == config_lines(load_config(workdir / "c.cfg"))


def test_config_errors_name_the_line(workdir):
    (workdir / "bad.cfg").write_text("epochs=3\nwhat=1\n")
    with pytest.raises(ConfigError, match="bad.cfg:2"):
        load_config(workdir / "bad.cfg")


def test_every_key_is_documented():
    from dataclasses import fields

    assert all(f.metadata.get("doc") for f in fields(RunConfig))


def test_help_exits_cleanly(capsys):
    assert main(["--help"]) == 0
    assert "lambda=1.0" in capsys.readouterr().out
