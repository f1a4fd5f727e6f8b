"""Flat ``key=value`` run configuration shared by every CLI command.

A config file holds one ``key=value`` per line; blank lines and lines starting with
``#`` are ignored. Later assignments override earlier ones, and ``--set`` overrides
the file. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, MissingFileError
from .pipeline import TrainSettings
from .synth import LongTailSpec


def _doc(default, text: str):
    return field(default=default, metadata={"doc": text})


@dataclass
class RunConfig:
    # data synthesis
    num_classes: int = _doc(100, "number of classes C")
    n_max: int = _doc(500, "training samples in the largest class")
    imbalance_factor: float = _doc(50.0, "largest / smallest class size")
    head_tail_threshold: int = _doc(100, "classes with more training samples than this are head classes")
    feature_dim: int = _doc(32, "width of the raw feature vectors")
    prototype_norm: float = _doc(5.0, "norm of each class center in feature space")
    noise_sigma: float = _doc(0.75, "std of the Gaussian noise added to each feature coordinate")
    test_per_class: int = _doc(20, "test samples per class")
    signature_per_title: int = _doc(2, "class-specific words per title")
    signature_word_freq: int = _doc(25, "target number of titles per signature word")
    family_per_title: int = _doc(1, "words per title from the head/tail shared family pool")
    noise_per_title: int = _doc(2, "promotion words per title")
    noise_vocab: int = _doc(80, "size of the promotion-word pool")
    rare_token_rate: float = _doc(0.05, "fraction of titles carrying one unique rare token")
    shared_fraction: float = _doc(0.12, "target fraction of words shared by head and tail titles")
    max_signature_freq_ratio: float = _doc(5.0, "bound on most/least frequent signature word ratio")
    embedding_scale: float = _doc(1.0, "generated word vectors have norm embedding_scale * sqrt(dim)")
    word_noise: float = _doc(0.5, "spread of word vectors around their class latent")
    visual_semantic_coupling: float = _doc(0.8, "share of each class center explained by its latent")
    parent_similarity: float = _doc(0.5, "latent similarity of a tail class to its head parent")
    # model
    dim: int = _doc(32, "width of the visual feature, word embeddings and semantic embedding")
    hidden_dims: str = _doc("64", "comma-separated hidden widths of the visual extractor ('' for none)")
    activation: str = _doc("tanh", "hidden activation: tanh | relu")
    mode: str = _doc("bilinear_attention", "semantic stream: bilinear_attention | mean_pooling")
    shards: int = _doc(1, "classifier shards M (1 = dense)")
    use_bias: bool = _doc(True, "classifier bias term")
    # training
    lam: float = _doc(1.0, "weight of the mixed-feature term (config key 'lambda')")
    baseline: bool = _doc(False, "train the visual-only baseline (no semantic stream)")
    epochs: int = _doc(12, "training epochs")
    learning_rate: float = _doc(0.1, "initial SGD step size")
    gamma: float = _doc(0.8, "step decay factor")
    step_epochs: int = _doc(1, "epochs between decays")
    batch_size: int = _doc(256, "mini-batch size")
    drop_fraction: float = _doc(0.05, "fraction of the vocabulary dropped at each frequency end")
    freeze_embeddings: bool = _doc(False, "keep word embeddings fixed during training")
    pretrained: bool = _doc(True, "initialize word embeddings from the embeddings file")
    workers: int = _doc(1, "data-parallel workers per mini-batch")
    seed: int = _doc(0, "seed for synthesis, initialization and shuffling")
    # paths
    manifest: str = _doc("manifest.tsv", "dataset manifest")
    embeddings: str = _doc("embeddings.txt", "word2vec text file written by synth, read by train")
    checkpoint: str = _doc("model.ckpt", "model checkpoint")
    vocab: str = _doc("vocab.tsv", "vocabulary written by train, read by attn")
    log: str = _doc("train.log", "training log")
    report: str = _doc("report.txt", "evaluation report")
    gradcheck_report: str = _doc("gradcheck.txt", "gradient-check report")

    def validate(self) -> None:
        if self.mode not in ("bilinear_attention", "mean_pooling"):
            raise ConfigError(f"mode must be bilinear_attention or mean_pooling, got {self.mode!r}")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"activation must be tanh or relu, got {self.activation!r}")
        if self.lam < 0:
            raise ConfigError("lambda must be nonnegative")
        for key in ("dim", "shards", "epochs", "step_epochs", "batch_size", "workers"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be at least 1")
        if self.seed < 0 or self.seed >= 1 << 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.hidden()

    def hidden(self) -> tuple:
        try:
            dims = tuple(int(h) for h in self.hidden_dims.split(",") if h.strip())
        except ValueError:
            raise ConfigError(f"hidden_dims must be comma-separated integers, got {self.hidden_dims!r}") from None
        if any(h < 1 for h in dims):
            raise ConfigError("hidden widths must be positive")
        return dims

    def spec(self) -> LongTailSpec:
        kw = {f.name: getattr(self, f.name) for f in fields(LongTailSpec) if hasattr(self, f.name)}
        kw["embedding_dim"] = self.dim
        return LongTailSpec(**kw)

    def settings(self) -> TrainSettings:
        return TrainSettings(
            dim=self.dim,
            hidden_dims=self.hidden(),
            activation=self.activation,
            mode=self.mode,
            shards=self.shards,
            use_bias=self.use_bias,
            lam=self.lam,
            visual_only=self.baseline,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            gamma=self.gamma,
            step_epochs=self.step_epochs,
            batch_size=self.batch_size,
            drop_fraction=self.drop_fraction,
            freeze_embeddings=self.freeze_embeddings,
            embeddings_path=self.embeddings if self.pretrained and self.embeddings else None,
            workers=self.workers,
            seed=self.seed,
        )


# 'lambda' is a Python keyword, so the field is 'lam' but the config key stays 'lambda'
_KEY_TO_FIELD = {"lambda": "lam"}
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}
_FIELDS = {f.name: f for f in fields(RunConfig)}


def config_keys() -> list:
    return [_FIELD_TO_KEY.get(name, name) for name in _FIELDS]


def _convert(key: str, raw: str, kind):
    raw = raw.strip()
    try:
        if kind in (bool, "bool"):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None
    return raw


def apply(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    key = key.strip()
    name = _KEY_TO_FIELD.get(key, key)
    if name not in _FIELDS or key in _FIELD_TO_KEY:
        raise ConfigError(f"unknown key {key!r}")
    return dataclasses.replace(cfg, **{name: _convert(key, raw, _FIELDS[name].type)})


def parse_assignment(text: str) -> tuple:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"expected key=value, got {text!r}")
    return key.strip(), value


def load_config(path=None, overrides=(), seed=None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise MissingFileError(f"config file not found: {p}")
        for n, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                cfg = apply(cfg, *parse_assignment(stripped))
            except ConfigError as e:
                raise ConfigError(f"{p}:{n}: {e}") from None
    for item in overrides:
        cfg = apply(cfg, *parse_assignment(item))
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=int(seed))
    cfg.validate()
    return cfg


def _render_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def config_lines(cfg: RunConfig) -> list:
    """Every key in declaration order as ``key=value``; parsing these lines reproduces ``cfg``."""
    return [f"{_FIELD_TO_KEY.get(name, name)}={_render_value(getattr(cfg, name))}" for name in _FIELDS]


def describe() -> str:
    """Documented defaults, one ``key=default  # doc`` line per key."""
    cfg = RunConfig()
    out = []
    for line, f in zip(config_lines(cfg), _FIELDS.values()):
        out.append(f"{line:40} # {f.metadata['doc']}")
    return "\n".join(out) + "\n"
