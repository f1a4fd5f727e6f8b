"""Registry of finite-difference checks: one case per differentiable operation plus the full objective.

Each case builds small random inputs away from kinks (relu at 0, ties in max) so the
central difference is meaningful, and reduces the output to a scalar through a fixed
random projection so every Jacobian entry is exercised.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import SemanticStreamConfig, attend, pad_tokens
from .autodiff import GradCheckReport, Tensor, grad_check
from .model import CoTrainModel, ModelConfig, batch_loss
from .sharded import ShardSet, sharded_cross_entropy
from .text import EmbeddingTable

CASES: dict = {}


def register(name: str):
    def deco(fn):
        CASES[name] = fn
        return fn

    return deco


def _param(rng, shape, name, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True, name=name)


def _project(out: Tensor, rng) -> Callable[[Tensor], Tensor]:
    """Scalar reduction ``sum(out * R)`` with R fixed at registration time."""
    R = Tensor(rng.normal(size=out.shape))
    return lambda t: ad.tensor_sum(ad.mul(t, R))


def _case(rng, forward, params):
    with ad.no_grad():
        proj = _project(forward(), rng)
    return (lambda: proj(forward())), params


@register("add")
def _add(rng):
    a, b = _param(rng, (3, 4), "a"), _param(rng, (4,), "b")
    return _case(rng, lambda: ad.add(a, b), [a, b])


@register("sub")
def _sub(rng):
    a, b = _param(rng, (3, 1), "a"), _param(rng, (3, 4), "b")
    return _case(rng, lambda: ad.sub(a, b), [a, b])


@register("mul")
def _mul(rng):
    a, b = _param(rng, (2, 3, 4), "a"), _param(rng, (3, 1), "b")
    return _case(rng, lambda: ad.mul(a, b), [a, b])


@register("scale")
def _scale(rng):
    a = _param(rng, (5,), "a")
    return _case(rng, lambda: ad.scale(a, -2.5), [a])


@register("matmul")
def _matmul(rng):
    a, b, v = _param(rng, (3, 4), "a"), _param(rng, (4, 2), "b"), _param(rng, (4,), "v")
    return _case(rng, lambda: ad.add(ad.matmul(a, b), ad.reshape(ad.matmul(a, v), (3, 1))), [a, b, v])


@register("linear")
def _linear(rng):
    W, b, x = _param(rng, (5, 4), "W"), _param(rng, (5,), "b"), _param(rng, (2, 4), "x")
    return _case(rng, lambda: ad.linear(W, b, x), [W, b, x])


@register("sum")
def _sum(rng):
    a = _param(rng, (3, 4), "a")
    return _case(rng, lambda: ad.add(ad.tensor_sum(a, axis=0), ad.tensor_sum(a, axis=1, keepdims=True)), [a])


@register("mean")
def _mean(rng):
    a = _param(rng, (3, 4), "a")
    return _case(rng, lambda: ad.mean_over_axis(a, -1), [a])


@register("reshape")
def _reshape(rng):
    a = _param(rng, (2, 6), "a")
    return _case(rng, lambda: ad.reshape(a, (3, 4)), [a])


@register("tanh")
def _tanh(rng):
    a = _param(rng, (4, 3), "a", -2.0, 2.0)
    return _case(rng, lambda: ad.tanh_act(a), [a])


@register("relu")
def _relu(rng):
    a = _param(rng, (4, 3), "a", 0.1, 1.0)
    a.data *= rng.choice([-1.0, 1.0], size=a.shape)
    return _case(rng, lambda: ad.relu(a), [a])


@register("elementwise_max")
def _max(rng):
    a = _param(rng, (2, 4), "a")
    b = Tensor(a.data + rng.choice([-1.0, 1.0], size=a.shape) * rng.uniform(0.1, 0.5, size=a.shape), True, "b")
    return _case(rng, lambda: ad.elementwise_max(a, b), [a, b])


@register("softmax")
def _softmax(rng):
    a = _param(rng, (2, 4), "a", -2.0, 2.0)
    mask = np.array([[True, True, True, True], [True, True, False, False]])
    return _case(rng, lambda: ad.softmax(a, axis=-1, mask=mask), [a])


@register("cross_entropy")
def _ce(rng):
    z = _param(rng, (3, 5), "logits", -2.0, 2.0)
    labels = np.array([0, 4, 2])
    return (lambda: ad.tensor_sum(ad.cross_entropy_from_logits(z, labels))), [z]


@register("gather_rows")
def _gather(rng):
    E = _param(rng, (5, 3), "table")
    idx = np.array([[0, 2, 2], [4, 1, 0]])
    return _case(rng, lambda: ad.gather_rows(E, idx), [E])


@register("bilinear_attention")
def _attention(rng):
    W = _param(rng, (2, 3, 4), "words", -1.5, 1.5)
    mask = np.array([[True, True, True], [True, True, False]])
    cfg = SemanticStreamConfig(4, "bilinear_attention")
    return _case(rng, lambda: attend(W, cfg, mask).embedding, [W])


@register("sharded_cross_entropy")
def _sharded(rng):
    W, b, x = _param(rng, (7, 4), "W"), _param(rng, (7,), "b"), _param(rng, (2, 4), "x")
    shards = ShardSet(W, b, 3)
    return (lambda: ad.tensor_sum(sharded_cross_entropy(x, [1, 6], shards))), [W, b, x]


def _objective(rng, shards: int):
    C, d, T, N = 5, 4, 3, 2
    V = 6
    emb = EmbeddingTable(rng.uniform(-1.0, 1.0, size=(V, d)), trainable=True)
    cfg = ModelConfig(input_dim=d, num_classes=C, dim=d, hidden_dims=(3,), activation="tanh", shards=shards)
    model = CoTrainModel.init(cfg, emb, seed=int(rng.integers(1 << 30)))
    model.W.data = rng.uniform(-1.0, 1.0, size=(C, d))
    if model.b is not None:
        model.b.data = rng.uniform(-0.5, 0.5, size=C)
    if shards > 1:
        model.shardset = ShardSet(model.W, model.b, shards)
    features = rng.normal(size=(N, d))
    tokens = [list(rng.integers(V, size=T)), list(rng.integers(V, size=T - 1))]
    labels = np.array([1, 3])
    params = model.named_parameters()
    return (lambda: batch_loss(model, features, tokens, labels, lam=0.7)[0]), params


@register("cotrain_objective")
def _full(rng):
    return _objective(rng, 1)


@register("cotrain_objective_sharded")
def _full_sharded(rng):
    return _objective(rng, 2)


def run_case(name: str, seed: int = 0, tolerance: float = 1e-5) -> GradCheckReport:
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    fn, params = CASES[name](rng)
    return grad_check(fn, params, tolerance=tolerance)


def run_all(seed: int = 0, tolerance: float = 1e-5) -> dict:
    """``{case name: report}`` for every registered case, in sorted name order."""
    return {name: run_case(name, seed, tolerance) for name in sorted(CASES)}


def render(results: dict) -> str:
    lines = []
    for name, rep in results.items():
        status = "PASS" if rep.passed else "FAIL"
        worst = rep.worst.rel_error if rep.worst is not None else 0.0
        lines.append(f"{name}\t{status}\tchecked={rep.checked}\tmax_rel_err={worst:.3e}")
    ok = all(r.passed for r in results.values())
    lines.append(f"overall\t{'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
