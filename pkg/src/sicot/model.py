"""Visual/semantic co-training with one shared classifier.

Training objective for a batch of N samples::

    total = mean_i CE(W x_v_i + b, y_i) + lam * mean_i CE(W max(x_v_i, x_s_i) + b, y_i)

``x_v`` comes from the visual extractor, ``x_s`` from the word attention stream.
Inference only ever runs the visual extractor and the shared classifier.
"""
from __future__ import annotations

import copy
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .attention import SemanticStreamConfig, semantic_forward_batch
from .autodiff import (
    SgdConfig,
    Tape,
    Tensor,
    add,
    cross_entropy_from_logits,
    elementwise_max,
    linear,
    mean_over_axis,
    no_grad,
    relu,
    scale,
    sgd_step,
    tanh_act,
)
from .errors import DimensionError, FormatError, MissingFileError
from .sharded import ShardSet, sharded_cross_entropy, sharded_rank_topk
from .text import EmbeddingTable

ACTIVATIONS = {"tanh": tanh_act, "relu": relu}


@dataclass
class VisualExtractorConfig:
    input_dim: int
    hidden_dims: tuple = ()
    output_dim: int = 32
    activation: str = "tanh"

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")


class VisualExtractor:
    """Multilayer perceptron; hidden layers use the configured activation, the last layer is affine."""

    def __init__(self, config: VisualExtractorConfig, layers: list):
        self.config = config
        self.layers = layers  # [(W, b), ...]

    @classmethod
    def init(cls, config: VisualExtractorConfig, rng: np.random.Generator) -> "VisualExtractor":
        dims = (config.input_dim,) + config.hidden_dims + (config.output_dim,)
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            W = Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)), True, f"visual.{i}.W")
            b = Tensor(np.zeros(fan_out), True, f"visual.{i}.b")
            layers.append((W, b))
        return cls(config, layers)

    @classmethod
    def identity(cls, dim: int) -> "VisualExtractor":
        config = VisualExtractorConfig(dim, (), dim)
        return cls(config, [(Tensor(np.eye(dim), True, "visual.0.W"), Tensor(np.zeros(dim), True, "visual.0.b"))])

    def parameters(self) -> list:
        return [t for layer in self.layers for t in layer]

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.config.input_dim:
            raise DimensionError(f"visual input width {x.shape[-1]} != extractor input_dim {self.config.input_dim}")
        act = ACTIVATIONS[self.config.activation]
        h = x
        for i, (W, b) in enumerate(self.layers):
            h = linear(W, b, h)
            if i < len(self.layers) - 1:
                h = act(h)
        return h


@dataclass
class ModelConfig:
    input_dim: int
    num_classes: int
    dim: int = 32
    hidden_dims: tuple = (64,)
    activation: str = "tanh"
    mode: str = "bilinear_attention"
    shards: int = 1
    use_bias: bool = True

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)


@dataclass
class LossBreakdown:
    total: float
    visual_term: float
    mixed_term: float


class CoTrainModel:
    def __init__(self, config: ModelConfig, extractor: VisualExtractor, embeddings: EmbeddingTable,
                 W: Tensor, b: Optional[Tensor]):
        if extractor.config.output_dim != config.dim or embeddings.dim != config.dim:
            raise DimensionError(
                f"visual width {extractor.config.output_dim} and embedding width {embeddings.dim} "
                f"must both equal dim={config.dim}"
            )
        if W.shape != (config.num_classes, config.dim):
            raise DimensionError(f"classifier weight shape {W.shape} != {(config.num_classes, config.dim)}")
        self.config = config
        self.extractor = extractor
        self.embeddings = embeddings
        self.W, self.b = W, b
        self.semantic = SemanticStreamConfig(config.dim, config.mode)
        self.shardset = ShardSet(W, b, config.shards) if config.shards > 1 else None

    @classmethod
    def init(cls, config: ModelConfig, embeddings: EmbeddingTable, seed: int = 0) -> "CoTrainModel":
        rng = np.random.default_rng([seed, 1])
        vcfg = VisualExtractorConfig(config.input_dim, config.hidden_dims, config.dim, config.activation)
        extractor = VisualExtractor.init(vcfg, rng)
        W = Tensor(rng.normal(0.0, 1.0 / np.sqrt(config.dim), size=(config.num_classes, config.dim)), True,
                   "classifier.W")
        b = Tensor(np.zeros(config.num_classes), True, "classifier.b") if config.use_bias else None
        return cls(config, extractor, embeddings, W, b)

    # -- parameters -------------------------------------------------------

    def named_parameters(self, include_semantic: bool = True) -> list:
        params = self.extractor.parameters() + [self.W]
        if self.b is not None:
            params.append(self.b)
        if include_semantic and self.embeddings.trainable:
            params.append(self.embeddings.weight)
        return params

    def all_tensors(self) -> list:
        """Every stored tensor, trainable or not, in checkpoint order."""
        out = self.extractor.parameters() + [self.W]
        if self.b is not None:
            out.append(self.b)
        return out + [self.embeddings.weight]

    def worker_view(self) -> "CoTrainModel":
        """Shallow twin whose parameter tensors share memory but own separate gradients."""
        twin = copy.copy(self)
        wrap = lambda t: None if t is None else Tensor.wrap(t.data, t.requires_grad, t.name)  # noqa: E731
        twin.extractor = VisualExtractor(self.extractor.config, [(wrap(W), wrap(b)) for W, b in self.extractor.layers])
        twin.embeddings = copy.copy(self.embeddings)
        twin.embeddings.weight = wrap(self.embeddings.weight)
        twin.W, twin.b = wrap(self.W), wrap(self.b)
        twin.shardset = ShardSet(twin.W, twin.b, self.config.shards) if self.config.shards > 1 else None
        return twin

    # -- streams ----------------------------------------------------------

    def visual_forward(self, raw_features) -> Tensor:
        x = raw_features if isinstance(raw_features, Tensor) else Tensor(raw_features)
        return self.extractor(x)

    def semantic_forward(self, token_lists: Sequence[Sequence[int]]) -> Tensor:
        return semantic_forward_batch(token_lists, self.embeddings, self.semantic).embedding

    def classify(self, x: Tensor) -> Tensor:
        """Logits of the shared classifier (dense path)."""
        return linear(self.W, self.b, x)

    def classifier_loss(self, x: Tensor, labels) -> Tensor:
        """Per-sample cross-entropy of the shared classifier, sharded when configured."""
        if self.shardset is not None:
            return sharded_cross_entropy(x, labels, self.shardset)
        return cross_entropy_from_logits(self.classify(x), labels)

    # -- inference ----------------------------------------------------------

    def topk(self, raw_features, k: int) -> np.ndarray:
        """Top-k classes per row (N, k), visual stream only; ties by ascending class index."""
        X = np.atleast_2d(np.asarray(raw_features, dtype=np.float64))
        with no_grad():
            xv = self.visual_forward(Tensor(X)).data
            if self.shardset is not None:
                return sharded_rank_topk(xv, k, self.shardset)
            logits = self.classify(Tensor(xv)).data
        return np.argsort(-logits, axis=1, kind="stable")[:, :k]

    def infer(self, raw_features) -> list:
        """Full class ranking by descending logit for one feature vector."""
        return [int(c) for c in self.topk(raw_features, self.config.num_classes)[0]]


def mixed_feature(x_v: Tensor, x_s: Tensor) -> Tensor:
    if x_v.shape != x_s.shape:
        raise DimensionError(f"visual feature {x_v.shape} and semantic embedding {x_s.shape} differ in width")
    return elementwise_max(x_v, x_s)


def cotrain_objective(loss_fn, x_v: Tensor, x_s: Optional[Tensor], labels, lam: float):
    """Combine the two classifier terms. ``x_s=None`` gives the visual-only objective.

    ``loss_fn(x, labels)`` must return per-sample losses from the shared classifier.
    Returns ``(total tensor, LossBreakdown)``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    visual = mean_over_axis(loss_fn(x_v, labels), 0)
    if x_s is None:
        return visual, LossBreakdown(visual.item(), visual.item(), 0.0)
    mixed = mean_over_axis(loss_fn(mixed_feature(x_v, x_s), labels), 0)
    total = add(visual, scale(mixed, lam))
    return total, LossBreakdown(total.item(), visual.item(), mixed.item())


def cotrain_loss(model: CoTrainModel, x_v: Tensor, x_s: Optional[Tensor], labels, lam: float):
    return cotrain_objective(model.classifier_loss, x_v, x_s, labels, lam)


def batch_loss(model: CoTrainModel, features: np.ndarray, token_lists, labels, lam: float, visual_only: bool = False):
    x_v = model.visual_forward(Tensor(features))
    x_s = None if visual_only else model.semantic_forward(token_lists)
    return cotrain_loss(model, x_v, x_s, labels, lam)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingSet:
    features: np.ndarray  # (N, input_dim)
    labels: np.ndarray  # (N,)
    tokens: list  # N non-empty index lists

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (len(self.features) == len(self.labels) == len(self.tokens)):
            raise ValueError("features, labels and tokens must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_records(cls, features, labels, tokens) -> "TrainingSet":
        """Drop samples whose title lost every word to vocabulary filtering."""
        keep = [i for i, t in enumerate(tokens) if len(t) > 0]
        return cls(np.asarray(features)[keep], np.asarray(labels)[keep], [list(tokens[i]) for i in keep])


@dataclass
class EpochStats:
    epoch: int
    learning_rate: float
    total: float
    visual_term: float
    mixed_term: float
    batches: int


def _worker_grads(model: CoTrainModel, features, tokens, labels, lam, visual_only, weight):
    view = model.worker_view()
    with Tape() as tape:
        total, parts = batch_loss(view, features, tokens, labels, lam, visual_only)
        loss = scale(total, weight) if weight != 1.0 else total
        tape.backward(loss)
    params = view.named_parameters(include_semantic=not visual_only)
    return [p.grad for p in params], parts


def _chunks(n: int, workers: int) -> list:
    workers = max(1, min(workers, n))
    base, extra = divmod(n, workers)
    out, lo = [], 0
    for i in range(workers):
        hi = lo + base + (1 if i < extra else 0)
        out.append((lo, hi))
        lo = hi
    return out


def train_step(model: CoTrainModel, features, tokens, labels, lam: float, sgd: SgdConfig, epoch: int,
               visual_only: bool = False, workers: int = 1, pool: Optional[ThreadPoolExecutor] = None) -> LossBreakdown:
    """One SGD step on one mini-batch, optionally split across data-parallel workers.

    Worker gradients are summed in worker-index order so the result does not depend on
    thread scheduling.
    """
    n = len(labels)
    spans = _chunks(n, workers)
    jobs = [
        (features[lo:hi], tokens[lo:hi], labels[lo:hi], lam, visual_only, 1.0 if len(spans) == 1 else (hi - lo) / n)
        for lo, hi in spans
    ]
    if pool is not None and len(jobs) > 1:
        results = list(pool.map(lambda j: _worker_grads(model, *j), jobs))
    else:
        results = [_worker_grads(model, *j) for j in jobs]
    params = model.named_parameters(include_semantic=not visual_only)
    for i, p in enumerate(params):
        g = results[0][0][i]
        for grads, _ in results[1:]:
            g = g + grads[i]
        p.grad = g
    sgd_step(params, sgd, epoch)
    weights = [(hi - lo) / n for lo, hi in spans]
    if len(results) == 1:
        return results[0][1]
    total = sum(w * r[1].total for w, r in zip(weights, results))
    visual = sum(w * r[1].visual_term for w, r in zip(weights, results))
    mixed = sum(w * r[1].mixed_term for w, r in zip(weights, results))
    return LossBreakdown(total, visual, mixed)


def train_epoch(data: TrainingSet, model: CoTrainModel, sgd: SgdConfig, epoch: int, seed: int, lam: float = 1.0,
                visual_only: bool = False, workers: int = 1) -> EpochStats:
    """Shuffle with a generator seeded by ``(seed, epoch)`` and run one pass of mini-batch SGD."""
    if len(data) == 0:
        raise ValueError("empty training set")
    order = np.random.default_rng([seed, epoch]).permutation(len(data))
    totals = np.zeros(3)
    batches = 0
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for start in range(0, len(data), sgd.batch_size):
            idx = order[start : start + sgd.batch_size]
            parts = train_step(
                model,
                data.features[idx],
                [data.tokens[i] for i in idx],
                data.labels[idx],
                lam,
                sgd,
                epoch,
                visual_only=visual_only,
                workers=workers,
                pool=pool,
            )
            totals += len(idx) * np.array([parts.total, parts.visual_term, parts.mixed_term])
            batches += 1
    finally:
        if pool is not None:
            pool.shutdown()
    mean = totals / len(data)
    return EpochStats(epoch, sgd.effective_lr(epoch), float(mean[0]), float(mean[1]), float(mean[2]), batches)


def fit(data: TrainingSet, model: CoTrainModel, sgd: SgdConfig, epochs: int, seed: int, lam: float = 1.0,
        visual_only: bool = False, workers: int = 1, log=None) -> list:
    history = []
    for epoch in range(epochs):
        stats = train_epoch(data, model, sgd, epoch, seed, lam, visual_only, workers)
        history.append(stats)
        if log is not None:
            log(stats)
    return history


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = "#sicot-checkpoint v1"


def save_checkpoint(model: CoTrainModel, path) -> None:
    """Text dump: header, model config as JSON, then one tensor per line.

    Floats are written with ``repr`` (shortest round-trip form), so reloading is bit-exact.
    """
    cfg = asdict(model.config)
    cfg["hidden_dims"] = list(cfg["hidden_dims"])
    lines = [
        CHECKPOINT_MAGIC,
        f"#code-version {__version__}",
        "#model " + json.dumps(cfg, sort_keys=True),
        f"#embeddings-trainable {int(model.embeddings.trainable)}",
    ]
    for t in model.all_tensors():
        shape = ",".join(str(s) for s in t.shape)
        values = " ".join(repr(float(v)) for v in t.data.reshape(-1))
        lines.append(f"{t.name}\t{shape}\t{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> CoTrainModel:
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"checkpoint not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != CHECKPOINT_MAGIC:
        raise FormatError("not a sicot checkpoint", 1)
    try:
        cfg = json.loads(lines[2].removeprefix("#model "))
        trainable = bool(int(lines[3].split()[1]))
    except (IndexError, ValueError):
        raise FormatError("corrupt checkpoint header", 3) from None
    config = ModelConfig(**cfg)
    tensors = {}
    for n, line in enumerate(lines[4:], start=5):
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError("expected '<name>\\t<shape>\\t<values>'", n)
        shape = tuple(int(s) for s in parts[1].split(",") if s)
        values = np.array([float(v) for v in parts[2].split(" ") if v], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise FormatError(f"tensor {parts[0]} has {values.size} values for shape {shape}", n)
        tensors[parts[0]] = values.reshape(shape)
    n_layers = len(config.hidden_dims) + 1
    layers = [
        (Tensor(tensors[f"visual.{i}.W"], True, f"visual.{i}.W"), Tensor(tensors[f"visual.{i}.b"], True, f"visual.{i}.b"))
        for i in range(n_layers)
    ]
    vcfg = VisualExtractorConfig(config.input_dim, config.hidden_dims, config.dim, config.activation)
    emb = EmbeddingTable(tensors["embeddings"], trainable)
    W = Tensor(tensors["classifier.W"], True, "classifier.W")
    b = Tensor(tensors["classifier.b"], True, "classifier.b") if config.use_bias else None
    return CoTrainModel(config, VisualExtractor(vcfg, layers), emb, W, b)
