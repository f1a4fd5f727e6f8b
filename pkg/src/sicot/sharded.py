"""In-process model-parallel classifier head.

The classifier weight is row-partitioned into M contiguous shards. Softmax
cross-entropy is computed with a two-phase reduction: every shard reports its
local max, the coordinator reduces them to the global max ``mu``; every shard then
reports ``sum exp(z - mu)`` over its own classes, reduced to ``Z``. A shard never
holds logits outside its class range. Reductions run in ascending shard id, which
makes repeated runs bit-identical.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, _make, cross_entropy_from_logits, linear, no_grad
from .errors import DimensionError


def partition(num_classes: int, num_shards: int) -> list[tuple[int, int]]:
    """Contiguous ``[lo, hi)`` ranges; the first ``C mod M`` shards get one extra class."""
    C, M = int(num_classes), int(num_shards)
    if M < 1 or M > C:
        raise ValueError(f"shard count must satisfy 1 <= M <= C, got M={M}, C={C}")
    base, extra = divmod(C, M)
    ranges, lo = [], 0
    for i in range(M):
        hi = lo + base + (1 if i < extra else 0)
        ranges.append((lo, hi))
        lo = hi
    return ranges


@dataclass
class Shard:
    shard_id: int
    lo: int
    hi: int
    W: np.ndarray  # view of rows [lo, hi) of the shared weight
    b: np.ndarray | None

    def local_logits(self, x: np.ndarray) -> np.ndarray:
        z = x @ self.W.T
        return z + self.b if self.b is not None else z


@dataclass
class LocalMaxMsg:
    shard_id: int
    local_max: np.ndarray


@dataclass
class ExpSumMsg:
    shard_id: int
    exp_sum: np.ndarray


@dataclass
class ReductionSummary:
    global_max: np.ndarray
    global_expsum: np.ndarray
    local_max: list = field(default_factory=list)
    exp_sums: list = field(default_factory=list)

    def dump(self, row: int = 0) -> str:
        """``shard_id\\tlocal_max\\texp_sum`` lines for one sample of the batch."""
        lines = []
        for i, (m, s) in enumerate(zip(self.local_max, self.exp_sums)):
            lines.append(f"{i}\t{float(np.atleast_1d(m)[row])!r}\t{float(np.atleast_1d(s)[row])!r}")
        return "\n".join(lines) + "\n"


class ShardSet:
    """Row partition of one shared ``(C, d)`` weight (and optional ``(C,)`` bias).

    The shards hold numpy views, so updating the shared parameter updates every shard.
    """

    def __init__(self, W: Tensor, b: Tensor | None, num_shards: int):
        if W.data.ndim != 2:
            raise DimensionError(f"classifier weight must be 2-D, got {W.shape}")
        self.W, self.b = W, b
        self.ranges = partition(W.shape[0], num_shards)
        self.shards = [
            Shard(i, lo, hi, W.data[lo:hi], None if b is None else b.data[lo:hi])
            for i, (lo, hi) in enumerate(self.ranges)
        ]

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    def __len__(self) -> int:
        return len(self.shards)

    def owner(self, label: int) -> Shard:
        for s in self.shards:
            if s.lo <= label < s.hi:
                return s
        raise ValueError(f"label {label} outside all shard ranges [0, {self.num_classes})")


def _reduce(shards: Sequence[Shard], X: np.ndarray):
    """Both reduction phases; returns per-shard logits, per-shard exps and the summary."""
    local = [s.local_logits(X) for s in shards]
    max_msgs = [LocalMaxMsg(s.shard_id, z.max(axis=1)) for s, z in zip(shards, local)]
    mu = max_msgs[0].local_max.copy()
    for msg in max_msgs[1:]:
        mu = np.maximum(mu, msg.local_max)
    exps = [np.exp(z - mu[:, None]) for z in local]
    sum_msgs = [ExpSumMsg(s.shard_id, e.sum(axis=1)) for s, e in zip(shards, exps)]
    Z = sum_msgs[0].exp_sum.copy()
    for msg in sum_msgs[1:]:
        Z = Z + msg.exp_sum
    summary = ReductionSummary(mu, Z, [m.local_max for m in max_msgs], [m.exp_sum for m in sum_msgs])
    return local, exps, summary


@dataclass
class ShardedCEResult:
    loss: np.ndarray  # per sample
    logit_grads: list  # per shard, (N, hi - lo)
    weight_grads: list  # per shard, (hi - lo, d)
    bias_grads: list
    input_grad: np.ndarray  # (N, d)
    summary: ReductionSummary


def sharded_ce(x, labels, shardset: ShardSet) -> ShardedCEResult:
    """Cross-entropy of ``W x + b`` against ``labels`` without assembling full logits.

    ``x`` may be one vector (d,) with a scalar label or a batch (N, d) with N labels.
    Returned gradients are those of the per-sample losses summed over the batch.
    """
    X = np.atleast_2d(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64))
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if X.shape[1] != shardset.W.shape[1]:
        raise DimensionError(f"input width {X.shape[1]} != classifier width {shardset.W.shape[1]}")
    if lab.shape[0] != X.shape[0]:
        raise DimensionError(f"{lab.shape[0]} labels for {X.shape[0]} inputs")
    if np.any(lab < 0) or np.any(lab >= shardset.num_classes):
        bad = int(lab[(lab < 0) | (lab >= shardset.num_classes)][0])
        raise ValueError(f"label {bad} outside all shard ranges [0, {shardset.num_classes})")
    shards = shardset.shards
    local, exps, summary = _reduce(shards, X)
    mu, Z = summary.global_max, summary.global_expsum
    rows = np.arange(X.shape[0])
    z_label = np.empty(X.shape[0])
    logit_grads = []
    for s, z, e in zip(shards, local, exps):
        own = (lab >= s.lo) & (lab < s.hi)
        z_label[own] = z[rows[own], lab[own] - s.lo]
        g = e / Z[:, None]
        g[rows[own], lab[own] - s.lo] -= 1.0
        logit_grads.append(g)
    loss = mu + np.log(Z) - z_label
    weight_grads = [g.T @ X for g in logit_grads]
    bias_grads = [g.sum(axis=0) for g in logit_grads]
    dx = logit_grads[0] @ shards[0].W
    for s, g in zip(shards[1:], logit_grads[1:]):
        dx = dx + g @ s.W
    return ShardedCEResult(loss, logit_grads, weight_grads, bias_grads, dx, summary)


def sharded_cross_entropy(x: Tensor, labels, shardset: ShardSet) -> Tensor:
    """Differentiable per-sample losses (N,) through the sharded head.

    Gradients flow to the shared weight, bias and ``x``.
    """
    batched = x.data.ndim == 2
    X = x.data if batched else x.data[None, :]
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    res = sharded_ce(X, lab, shardset)
    W, b = shardset.W, shardset.b

    def bw(g):
        g = np.reshape(g, (-1, 1))
        gW = np.empty_like(W.data)
        gb = None if b is None else np.empty_like(b.data)
        for s, lg in zip(shardset.shards, res.logit_grads):
            scaled = lg * g
            gW[s.lo : s.hi] = scaled.T @ X
            if gb is not None:
                gb[s.lo : s.hi] = scaled.sum(axis=0)
        gx = (res.logit_grads[0] * g) @ shardset.shards[0].W
        for s, lg in zip(shardset.shards[1:], res.logit_grads[1:]):
            gx = gx + (lg * g) @ s.W
        if not batched:
            gx = gx[0]
        return (gW, gb, gx) if b is not None else (gW, gx)

    inputs = (W, b, x) if b is not None else (W, x)
    return _make(res.loss if batched else np.asarray(res.loss[0]), inputs, bw)


def sharded_topk(x, k: int, shardset: ShardSet) -> list:
    """Global top-k ``(class, score)`` pairs merged from per-shard top-k lists.

    For a batch input returns one list per row. Ties go to the lower class index.
    """
    X = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if not 1 <= k <= shardset.num_classes:
        raise ValueError(f"k must lie in [1, {shardset.num_classes}]")
    cand_cls, cand_score = [], []
    for s in shardset.shards:
        z = s.local_logits(X)
        kk = min(k, s.hi - s.lo)
        # stable sort on -z keeps ascending class order among equal scores
        order = np.argsort(-z, axis=1, kind="stable")[:, :kk]
        cand_cls.append(order + s.lo)
        cand_score.append(np.take_along_axis(z, order, axis=1))
    classes = np.concatenate(cand_cls, axis=1)
    scores = np.concatenate(cand_score, axis=1)
    out = []
    for c_row, s_row in zip(classes, scores):
        order = np.lexsort((c_row, -s_row))[:k]
        out.append([(int(c_row[i]), float(s_row[i])) for i in order])
    return out[0] if single else out


def sharded_rank_topk(X: np.ndarray, k: int, shardset: ShardSet) -> np.ndarray:
    """Class indices only, shape (N, k)."""
    rows = sharded_topk(np.atleast_2d(X), k, shardset)
    return np.array([[c for c, _ in r] for r in rows], dtype=np.int64)


@dataclass
class EquivalenceRow:
    num_shards: int
    instance: int
    loss_delta: float
    grad_delta: float
    tolerance: float
    passed: bool


@dataclass
class EquivalenceReport:
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def worst(self) -> EquivalenceRow | None:
        return max(self.rows, key=lambda r: max(r.loss_delta / r.tolerance, r.grad_delta / 1e-12), default=None)


def equivalence_check(x, label, W, b, shard_counts: Sequence[int], instance: int = 0,
                      report: EquivalenceReport | None = None) -> EquivalenceReport:
    """Compare sharded loss and gradients against the dense single-matrix computation.

    Passes when ``|loss_sharded - loss_dense| <= 1e-12 * (1 + |loss_dense|)`` and the
    largest gradient coordinate difference (weight, bias and input) is at most 1e-12.
    """
    report = report if report is not None else EquivalenceReport()
    W = W if isinstance(W, Tensor) else Tensor(W)
    b = b if (b is None or isinstance(b, Tensor)) else Tensor(b)
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    with no_grad():
        dense_logits = linear(W, b, Tensor(x)).data
    mu = dense_logits.max()
    p = np.exp(dense_logits - mu)
    Z = p.sum()
    dense_loss = mu + np.log(Z) - dense_logits[label]
    gz = p / Z
    gz[label] -= 1.0
    dense_gW, dense_gb, dense_gx = np.outer(gz, x), gz, gz @ W.data
    for M in shard_counts:
        res = sharded_ce(x, label, ShardSet(W, b, M))
        gW = np.concatenate(res.weight_grads, axis=0)
        deltas = [np.max(np.abs(gW - dense_gW)), np.max(np.abs(res.input_grad[0] - dense_gx))]
        if b is not None:
            deltas.append(np.max(np.abs(np.concatenate(res.bias_grads) - dense_gb)))
        loss_delta = abs(float(res.loss[0]) - float(dense_loss))
        tol = 1e-12 * (1.0 + abs(float(dense_loss)))
        grad_delta = float(max(deltas))
        report.rows.append(
            EquivalenceRow(M, instance, loss_delta, grad_delta, tol, loss_delta <= tol and grad_delta <= 1e-12)
        )
    return report


def dense_reference_loss(logits: np.ndarray, label: int) -> float:
    with no_grad():
        return cross_entropy_from_logits(Tensor(logits), label).item()
