"""End-to-end helpers: manifest -> vocabulary -> model -> training -> report."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .autodiff import SgdConfig
from .evaluation import EvalReport, evaluate, head_tail_split
from .model import CoTrainModel, ModelConfig, TrainingSet, fit
from .synth import DatasetManifest
from .text import Vocab, build_vocab, embeddings_from_vectors, encode, load_embeddings, tokenize


@dataclass
class TrainSettings:
    dim: int = 32
    hidden_dims: tuple = (64,)
    activation: str = "tanh"
    mode: str = "bilinear_attention"
    shards: int = 1
    use_bias: bool = True
    lam: float = 1.0
    visual_only: bool = False
    epochs: int = 12
    learning_rate: float = 0.1
    gamma: float = 0.8
    step_epochs: int = 1
    batch_size: int = 256
    drop_fraction: float = 0.05
    freeze_embeddings: bool = False
    embeddings_path: Optional[str] = None
    workers: int = 1
    seed: int = 0

    def sgd(self) -> SgdConfig:
        return SgdConfig(self.learning_rate, self.gamma, self.step_epochs, self.batch_size)


def prepare(manifest: DatasetManifest, drop_fraction: float) -> tuple[Vocab, TrainingSet]:
    X, y, titles = manifest.arrays("train")
    vocab = build_vocab([tokenize(t) for t in titles], drop_fraction)
    tokens = [encode(t, vocab).tokens for t in titles]
    return vocab, TrainingSet.from_records(X, y, tokens)


def build_model(manifest: DatasetManifest, vocab: Vocab, s: TrainSettings, pretrained: Optional[dict] = None) -> CoTrainModel:
    """``pretrained`` (a ``{word: vector}`` mapping) takes precedence over ``s.embeddings_path``."""
    if pretrained is not None:
        table = embeddings_from_vectors(pretrained, vocab, s.dim, seed=s.seed, trainable=not s.freeze_embeddings)
    else:
        table = load_embeddings(s.embeddings_path, vocab, s.dim, seed=s.seed, trainable=not s.freeze_embeddings)
    cfg = ModelConfig(
        input_dim=manifest.dim,
        num_classes=manifest.num_classes,
        dim=s.dim,
        hidden_dims=s.hidden_dims,
        activation=s.activation,
        mode=s.mode,
        shards=s.shards,
        use_bias=s.use_bias,
    )
    return CoTrainModel.init(cfg, table, seed=s.seed)


def train(manifest: DatasetManifest, s: TrainSettings, pretrained: Optional[dict] = None, log=None):
    vocab, data = prepare(manifest, s.drop_fraction)
    model = build_model(manifest, vocab, s, pretrained)
    history = fit(data, model, s.sgd(), s.epochs, s.seed, s.lam, s.visual_only, s.workers, log=log)
    return model, vocab, history


def evaluate_model(model: CoTrainModel, manifest: DatasetManifest, threshold: int) -> EvalReport:
    X, y, _ = manifest.arrays("test")
    split = head_tail_split(manifest.train_counts(), threshold)
    return evaluate(lambda F: model.topk(F, 3), X, y, split)


def run(manifest: DatasetManifest, s: TrainSettings, threshold: int, pretrained: Optional[dict] = None) -> EvalReport:
    model, _, _ = train(manifest, s, pretrained)
    return evaluate_model(model, manifest, threshold)


def seed_average(reports: list) -> dict:
    keys = reports[0].as_dict().keys()
    return {k: float(np.mean([r.as_dict()[k] for r in reports])) for k in keys}
