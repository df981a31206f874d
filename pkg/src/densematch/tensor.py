"""Dense float32 tensors with reverse-mode differentiation on an explicit tape.

Storage and compute are single precision, row-major and contiguous; slices
copy. Ops record themselves on the innermost active :class:`Tape`, and
``backward`` replays the record in reverse, visiting each node exactly once.
When no tape is active every op is a plain numpy computation (inference mode).
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand extents do not satisfy an op's contract."""


class TapeError(RuntimeError):
    """Backward called on an output that is not a scalar on the tape."""


class EvalError(ValueError):
    """A checked function produced a non-finite value."""


# Stack of active tapes; ops record on the innermost one only.
_TAPES: list["Tape"] = []


class Tensor:
    """A dense float32 array, optionally participating in gradient taping."""

    __slots__ = ("data", "requires_grad", "grad", "_hist")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.ascontiguousarray(data, dtype=np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._hist = False  # True once produced by a taped op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """A copy outside the tape; gradients do not flow through it."""
        return Tensor(self.data.copy())

    # -- operator sugar (scalars are promoted to constant tensors) --

    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(np.float32(x))
    raise TypeError(f"cannot operate on {type(x).__name__}; wrap arrays in Tensor")


class Tape:
    """Ordered record of executed differentiable ops.

    Usable as a context manager; nests, with ops recording on the innermost
    active tape. A tape is confined to a single thread.
    """

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPES.pop()
        assert popped is self, "tapes must unwind in LIFO order"
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self._entries.append((out, inputs, backward_fn))


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Tape the op if recording is active and any input carries history."""
    if _TAPES and any(t.requires_grad or t._hist for t in inputs):
        out._hist = True
        _TAPES[-1].record(out, tuple(inputs), backward_fn)
    return out


def backward(tape: Tape, output: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``output``.

    Gradients on leaves accumulate across calls; use ``zero_grad`` between
    optimization steps. Deterministic: accumulation follows reverse tape order.
    """
    if output.size != 1:
        raise TapeError(f"backward needs a scalar output, got shape {output.shape}")
    if not (output._hist or output.requires_grad):
        raise TapeError("output is not on the tape")
    grads: dict[int, np.ndarray] = {id(output): np.ones_like(output.data)}
    leaves: dict[int, Tensor] = {}
    if output.requires_grad:
        leaves[id(output)] = output
    for out, inputs, fn in reversed(tape._entries):
        g = grads.get(id(out))
        if g is None:
            continue
        for t, gi in zip(inputs, fn(g)):
            if gi is None or not (t.requires_grad or t._hist):
                continue
            acc = grads.get(id(t))
            grads[id(t)] = gi.astype(np.float32, copy=False) if acc is None else acc + gi
            if t.requires_grad:
                leaves[id(t)] = t
    for key, t in leaves.items():
        g = grads.get(key)
        if g is None:
            continue
        t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape``, inverting numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _record(out, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(-g, bsh)

    return _record(out, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _record(out, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data / b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return (
            _unbroadcast(g / bd, ad.shape),
            _unbroadcast(-g * ad / (bd * bd), bd.shape),
        )

    return _record(out, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), lambda g: (-g,))


def scale(a: Tensor, s: float) -> Tensor:
    """Multiply by a python scalar constant."""
    s = float(s)
    out = Tensor(a.data * np.float32(s))
    return _record(out, (a,), lambda g: (g * np.float32(s),))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    ad = a.data
    return _record(out, (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    y = np.sqrt(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g / (2.0 * y),))


def elu(a: Tensor) -> Tensor:
    """Exponential linear unit: x for x >= 0, exp(x) - 1 below."""
    pos = a.data >= 0
    e = np.exp(np.minimum(a.data, 0.0))
    y = np.where(pos, a.data, e - 1.0).astype(np.float32)
    out = Tensor(y)
    deriv = np.where(pos, np.float32(1.0), e).astype(np.float32)
    return _record(out, (a,), lambda g: (g * deriv,))


def elu_plus_one(a: Tensor) -> Tensor:
    """The strictly positive attention feature map: elu(x) + 1."""
    pos = a.data >= 0
    e = np.exp(np.minimum(a.data, 0.0))
    y = np.where(pos, a.data + 1.0, e).astype(np.float32)
    out = Tensor(y)
    deriv = np.where(pos, np.float32(1.0), e).astype(np.float32)
    return _record(out, (a,), lambda g: (g * deriv,))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul takes 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _record(out, (a, b), bwd)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matmul on 3-D operands [B,n,k] @ [B,k,m]."""
    if a.ndim != 3 or b.ndim != 3:
        raise ShapeError(f"bmm takes 3-D operands, got {a.shape} @ {b.shape}")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
        raise ShapeError(f"bmm extents disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    return _record(out, (a, b), bwd)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)))
    inv = np.argsort(axes)
    return _record(out, (a,), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    orig = a.shape
    return _record(out, (a,), lambda g: (g.reshape(orig),))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous range along one axis; the result is a copy."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = Tensor(a.data[idx].copy())
    ashape = a.shape

    def bwd(g):
        full = np.zeros(ashape, dtype=np.float32)
        full[idx] = g
        return (full,)

    return _record(out, (a,), bwd)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Index-select rows (axis 0) with an integer array; backward scatter-adds."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.min(initial=0) < 0 or (idx.size and idx.max() >= a.shape[0]):
        raise ShapeError("gather index out of range")
    out = Tensor(a.data[idx])
    ashape = a.shape

    def bwd(g):
        full = np.zeros(ashape, dtype=np.float32)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    splits = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record(out, tuple(tensors), bwd)


# ---------------------------------------------------------------------------
# reductions and normalizations
# ---------------------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    ashape = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ashape).astype(np.float32),)

    return _record(out, (a,), bwd)


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))
    ashape = a.shape
    n = a.size if axis is None else a.shape[axis]

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ashape).astype(np.float32) / np.float32(n),)

    return _record(out, (a,), bwd)


def softmax(a: Tensor, axis: int) -> Tensor:
    """Rowwise softmax along ``axis`` with max-subtraction for stability."""
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def bwd(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), bwd)


def logsumexp(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """log(sum(exp(x))) along ``axis``, computed with max-subtraction."""
    m = a.data.max(axis=axis, keepdims=True)
    y = np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True)) + m
    soft = np.exp(a.data - y)
    if not keepdims:
        y = np.squeeze(y, axis=axis)
    out = Tensor(y)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * soft,)

    return _record(out, (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    y = xc * inv
    out = Tensor(y * gain.data + bias.data)
    gd = gain.data
    n = x.shape[-1]

    def bwd(g):
        gy = g * gd
        m1 = gy.mean(axis=-1, keepdims=True)
        m2 = (gy * y).mean(axis=-1, keepdims=True)
        dx = (gy - m1 - y * m2) * inv
        red = tuple(range(g.ndim - 1))
        dgain = (g * y).sum(axis=red)
        dbias = g.sum(axis=red)
        return dx, dgain, dbias

    del n
    return _record(out, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# verification helpers
# ---------------------------------------------------------------------------


def assert_finite(t: Tensor, what: str = "tensor") -> None:
    if not t.is_finite():
        raise EvalError(f"{what} contains non-finite values")


def grad_check(
    f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-3
) -> float:
    """Max relative error between tape gradients of ``f`` and central differences.

    Relative error per component is |analytic - numeric| / max(|analytic|,
    |numeric|, 1e-8). ``f`` must return a scalar tensor and be evaluable at
    x +- eps componentwise.
    """
    x.zero_grad()
    with Tape() as tape:
        y = f(x)
    if not np.isfinite(y.data).all():
        raise EvalError("grad_check: f(x) is not finite")
    backward(tape, y)
    analytic = (
        np.zeros_like(x.data, dtype=np.float64)
        if x.grad is None
        else x.grad.astype(np.float64)
    )
    numeric = np.zeros_like(analytic)
    flat = x.data.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x).item()
        flat[i] = orig - eps
        lo = f(x).item()
        flat[i] = orig
        if not (math.isfinite(hi) and math.isfinite(lo)):
            raise EvalError("grad_check: perturbed evaluation is not finite")
        numeric.reshape(-1)[i] = (hi - lo) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
