"""Dense float64 tensors with tape-based (define-by-run) reverse-mode differentiation.

Every differentiable operation appends a node to the active :class:`Tape` of the
calling thread. ``backward`` replays that tape in reverse recording order, so each
node is visited exactly once. A tape can be consumed only once; call
:meth:`Tape.reset` before reusing it.
"""
from __future__ import annotations

import math
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import DimensionError, GraphError, NumericError

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "scale",
    "matmul",
    "linear",
    "tensor_sum",
    "mean_over_axis",
    "reshape",
    "tanh_act",
    "relu",
    "elementwise_max",
    "softmax",
    "cross_entropy_from_logits",
    "gather_rows",
    "SgdConfig",
    "sgd_step",
    "zero_grad",
    "grad_check",
    "GradCheckReport",
]


class Tensor:
    """A float64 array that may carry a gradient buffer of the same shape."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name
        # tape that produced this tensor; None for leaves
        self._tape: Optional[Tape] = None

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False, name: Optional[str] = None) -> "Tensor":
        """Tensor sharing ``array``'s memory (no copy); ``array`` must be float64."""
        t = cls.__new__(cls)
        t.data = array
        t.requires_grad = bool(requires_grad)
        t.grad = None
        t.name = name
        t._tape = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, name=self.name)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int):
        return mean_over_axis(self, axis)


# ---------------------------------------------------------------------------
# tape


@dataclass
class Node:
    inputs: tuple
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Records operations in execution order; the recording order is a topological order."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def record(self, inputs, output: Tensor, backward_fn) -> None:
        if self.consumed:
            raise GraphError("tape already consumed by backward(); call reset() before recording")
        self.nodes.append(Node(tuple(inputs), output, backward_fn))
        output._tape = self

    def reset(self) -> None:
        for node in self.nodes:
            node.output._tape = None
        self.nodes = []
        self.consumed = False

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise GraphError("backward() called twice on the same tape; call reset() first")
        if loss.data.size != 1:
            raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
        if loss._tape is not self:
            raise GraphError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        touched: list[Tensor] = [loss]
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            for inp, ig in zip(node.inputs, node.backward_fn(g)):
                if ig is None or not inp.requires_grad:
                    continue
                if inp._tape is None:
                    # leaf: accumulate into the persistent buffer
                    inp.grad = ig.copy() if inp.grad is None else inp.grad + ig
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ig
                else:
                    grads[key] = ig
                    touched.append(inp)
        for t in touched:
            t.grad = grads[id(t)]
        self.consumed = True

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


_local = threading.local()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
        _local.default = Tape()
        _local.grad_enabled = True
    return _local.stack


def current_tape() -> Tape:
    stack = _stack()
    if stack:
        return stack[-1]
    if _local.default.consumed:
        _local.default = Tape()
    return _local.default


def grad_enabled() -> bool:
    _stack()
    return _local.grad_enabled


@contextmanager
def no_grad():
    _stack()
    prev = _local.grad_enabled
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor with ``requires_grad`` reachable from ``loss``."""
    if loss.data.size != 1:
        raise GraphError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss._tape is None:
        raise GraphError("loss is not attached to any recorded graph")
    loss._tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    needs = grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.wrap(np.asarray(data, dtype=np.float64), requires_grad=needs)
    if needs:
        current_tape().record(inputs, out, backward_fn)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(t: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar constant."""
    c = float(c)
    return _make(t.data * c, (t,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def bw(g):
        A, B = a.data, b.data
        if A.ndim == 2 and B.ndim == 2:
            return g @ B.T, A.T @ g
        if A.ndim == 2:
            return np.outer(g, B), A.T @ g
        if B.ndim == 2:
            return B @ g, np.outer(A, g)
        return g * B, g * A

    return _make(a.data @ b.data, (a, b), bw)


def linear(W: Tensor, b: Optional[Tensor], x: Tensor) -> Tensor:
    """Affine map ``W x + b``; ``x`` is a single vector (d,) or a batch (N, d)."""
    if W.data.ndim != 2 or x.data.ndim not in (1, 2) or x.shape[-1] != W.shape[1]:
        raise DimensionError(f"linear: weight shape {W.shape} and input shape {x.shape} do not conform")
    if b is not None and b.shape != (W.shape[0],):
        raise DimensionError(f"linear: weight shape {W.shape} and bias shape {b.shape} do not conform")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data

    def bw(g):
        if x.data.ndim == 1:
            gW, gb = np.outer(g, x.data), g
        else:
            gW, gb = g.T @ x.data, g.sum(axis=0)
        gx = g @ W.data
        return (gW, gb, gx) if b is not None else (gW, gx)

    inputs = (W, b, x) if b is not None else (W, x)
    return _make(out, inputs, bw)


# ---------------------------------------------------------------------------
# reductions and shape


def _norm_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for tensor of rank {ndim}")
    return axis % ndim


def tensor_sum(t: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        return _make(np.asarray(t.data.sum()), (t,), lambda g: (np.broadcast_to(g, t.shape).copy(),))
    axis = _norm_axis(axis, t.data.ndim)
    out = t.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, t.shape).copy(),)

    return _make(out, (t,), bw)


def mean_over_axis(t: Tensor, axis: int) -> Tensor:
    axis = _norm_axis(axis, t.data.ndim)
    n = t.shape[axis]
    if n < 1:
        raise DimensionError(f"mean over empty axis {axis} of shape {t.shape}")
    out = t.data.mean(axis=axis)
    return _make(
        out,
        (t,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis) / n, t.shape).copy(),),
    )


def reshape(t: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = t.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {t.shape} as {shape}") from None
    return _make(out, (t,), lambda g: (g.reshape(t.shape),))


# ---------------------------------------------------------------------------
# nonlinearities


def tanh_act(t: Tensor) -> Tensor:
    out = np.tanh(t.data)
    return _make(out, (t,), lambda g: (g * (1.0 - out * out),))


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0
    return _make(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


def elementwise_max(a: Tensor, b: Tensor) -> Tensor:
    """Coordinate-wise max; on exact ties the gradient goes entirely to ``a``."""
    if a.shape != b.shape:
        raise DimensionError(f"elementwise_max: shapes {a.shape} and {b.shape} differ")
    take_a = a.data >= b.data
    return _make(
        np.where(take_a, a.data, b.data),
        (a, b),
        lambda g: (np.where(take_a, g, 0.0), np.where(take_a, 0.0, g)),
    )


def _softmax_array(z: np.ndarray, axis: int, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is None:
        if not np.all(np.isfinite(z)):
            raise NumericError("softmax: non-finite logits")
        mu = z.max(axis=axis, keepdims=True)
        e = np.exp(z - mu)
    else:
        if not np.all(np.isfinite(z[mask])):
            raise NumericError("softmax: non-finite logits")
        if not np.all(mask.any(axis=axis)):
            raise DimensionError("softmax: a row has no unmasked entries")
        zm = np.where(mask, z, -np.inf)
        mu = zm.max(axis=axis, keepdims=True)
        e = np.where(mask, np.exp(zm - mu), 0.0)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(logits: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-shifted softmax. ``mask`` (bool, same shape) excludes padded entries, which get 0."""
    axis = _norm_axis(axis, logits.data.ndim)
    if logits.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != logits.shape:
            raise DimensionError(f"softmax: mask shape {mask.shape} != logits shape {logits.shape}")
    out = _softmax_array(logits.data, axis, mask)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (logits,), bw)


def cross_entropy_from_logits(logits: Tensor, label) -> Tensor:
    """``logsumexp(z) - z[label]``.

    A vector of logits with an integer label gives a scalar. A batch (N, C) with
    N labels gives the N per-sample losses.
    """
    z = logits.data
    if z.ndim not in (1, 2):
        raise DimensionError(f"cross_entropy: logits must be (C,) or (N, C), got {logits.shape}")
    labels = np.asarray(label, dtype=np.int64)
    batched = z.ndim == 2
    z2 = z if batched else z[None, :]
    lab = labels.reshape(-1)
    if lab.shape[0] != z2.shape[0]:
        raise DimensionError(f"cross_entropy: {lab.shape[0]} labels for {z2.shape[0]} rows")
    C = z2.shape[1]
    if np.any(lab < 0) or np.any(lab >= C):
        raise ValueError(f"cross_entropy: label out of range [0, {C})")
    if not np.all(np.isfinite(z2)):
        raise NumericError("cross_entropy: non-finite logits")
    mu = z2.max(axis=1)
    shifted = np.exp(z2 - mu[:, None])
    total = shifted.sum(axis=1)
    rows = np.arange(z2.shape[0])
    loss = mu + np.log(total) - z2[rows, lab]
    probs = shifted / total[:, None]

    def bw(g):
        gz = probs.copy()
        gz[rows, lab] -= 1.0
        gz *= np.reshape(g, (-1, 1))
        return (gz if batched else gz[0],)

    return _make(loss if batched else np.asarray(loss[0]), (logits,), bw)


def gather_rows(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]``; the backward pass scatter-adds into the table."""
    idx = np.asarray(index, dtype=np.int64)
    if table.data.ndim != 2:
        raise DimensionError(f"gather_rows: table must be 2-D, got {table.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError(f"gather_rows: index out of range for table with {table.shape[0]} rows")

    def bw(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _make(table.data[idx], (table,), bw)


# ---------------------------------------------------------------------------
# optimisation


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.1
    gamma: float = 0.8
    step_epochs: int = 1
    batch_size: int = 256

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.step_epochs < 1 or self.batch_size < 1:
            raise ValueError("step_epochs and batch_size must be positive")

    def effective_lr(self, epoch: int) -> float:
        return self.learning_rate * self.gamma ** (epoch // self.step_epochs)


def sgd_step(params: Iterable[Tensor], config: SgdConfig, epoch: int) -> None:
    """In-place ``w -= lr(epoch) * grad``, then zero the gradients."""
    params = list(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise GraphError(f"sgd_step: parameter {p.name or i!r} has no gradient")
    lr = config.effective_lr(epoch)
    for p in params:
        p.data -= lr * p.grad
        p.grad = np.zeros_like(p.data)


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


# ---------------------------------------------------------------------------
# finite-difference oracle


@dataclass
class GradCheckEntry:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    tolerance: float
    checked: int = 0
    worst: Optional[GradCheckEntry] = None
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def __str__(self) -> str:
        status = "PASS" if self.passed else f"FAIL ({len(self.failures)} coordinates)"
        worst = ""
        if self.worst is not None:
            w = self.worst
            worst = f" worst={w.param}{list(w.index)} rel_err={w.rel_error:.3e}"
        return f"{status} checked={self.checked}{worst}"


def relative_error(analytic: float, numeric: float) -> float:
    # denominator floored at 1 so near-zero gradients are judged absolutely
    return abs(analytic - numeric) / max(1.0, abs(analytic), abs(numeric))


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    tolerance: float = 1e-5,
    step: float = 1e-5,
) -> GradCheckReport:
    """Compare backprop gradients of ``fn()`` with central differences.

    The finite-difference step for a coordinate of value ``w`` is
    ``step * (1 + |w|)``. Parameters are restored bit-exactly afterwards.
    """
    params = list(params)
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = fn()
        tape.backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    report = GradCheckReport(tolerance=tolerance)
    with no_grad():
        for pi, (p, ga) in enumerate(zip(params, analytic)):
            label = p.name or f"param{pi}"
            flat = p.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                h = step * (1.0 + abs(orig))
                flat[k] = orig + h
                fp = fn().item()
                flat[k] = orig - h
                fm = fn().item()
                flat[k] = orig
                num = (fp - fm) / (2.0 * h)
                ana = float(ga.reshape(-1)[k])
                err = relative_error(ana, num)
                if not math.isfinite(err):
                    err = math.inf
                index = tuple(int(i) for i in np.unravel_index(k, p.shape))
                entry = GradCheckEntry(label, index, ana, num, err)
                report.checked += 1
                if report.worst is None or err > report.worst.rel_error:
                    report.worst = entry
                if err > tolerance:
                    report.failures.append(entry)
    return report
