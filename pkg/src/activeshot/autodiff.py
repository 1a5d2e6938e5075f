"""Reverse-mode automatic differentiation over dense numpy arrays.

The operation set is deliberately small: exactly what the recurrent
Q-networks and their external memories need, so the entire surface stays
coverable by finite-difference checks. Graphs are define-by-run, rebuilt
for every episode batch and discarded after ``backward``.

Training state is float32; tensors keep whatever floating dtype they are
given, which lets the test harness run the same graphs in float64.

Any operation whose output contains NaN or Inf raises
:class:`~activeshot.errors.NumericalError` immediately instead of letting
a diverged value propagate.
"""
from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericalError, ShapeError

__all__ = [
    "Tensor",
    "no_grad",
    "grad_enabled",
    "const",
    "detach",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "concat",
    "reshape",
    "roll",
    "sigmoid",
    "tanh",
    "softplus",
    "softmax",
    "power",
    "cosine_similarity",
    "sum_reduce",
    "mean_reduce",
    "square",
    "grads_of",
    "zero_grads",
    "AdamState",
    "adam_step",
]

COSINE_EPS = 1e-8
_POWER_FLOOR = 1e-12

_GRAD_ENABLED: contextvars.ContextVar[bool] = contextvars.ContextVar(
    "activeshot_grad_enabled", default=True
)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the ``with`` block."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float32)
    return arr


class Tensor:
    """A dense array plus the bookkeeping needed for reverse mode.

    ``_parents`` and ``_bwd`` are set only on recorded op outputs; leaves
    and constants have empty parents. Gradients accumulate by summation,
    so shared subexpressions contribute once per use.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._bwd: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        """Backpropagate from this scalar through the recorded graph.

        Visits every reachable node exactly once, in reverse topological
        order. Accumulated gradients land in ``.grad`` of every tensor on
        a path to a ``requires_grad`` leaf.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar loss, got shape {self.data.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._bwd is not None:
                node._bwd(node.grad)

    # Operator sugar; the right operand may be a Tensor or a python float.
    def __add__(self, other):
        return add(self, _coerce(other, self.dtype))

    def __sub__(self, other):
        return sub(self, _coerce(other, self.dtype))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return _slice(self, key)


def const(data, dtype=np.float32) -> Tensor:
    """A non-differentiable tensor, float32 unless told otherwise."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=False)


def detach(t: Tensor) -> Tensor:
    """The same values with no graph history."""
    return Tensor(t.data, requires_grad=False)


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited = {id(root)}
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _ensure_finite(arr: np.ndarray, op: str) -> None:
    # Cheap first pass: a NaN/Inf anywhere makes the sum non-finite. The
    # sum itself can overflow on legitimately huge values, so only a full
    # elementwise scan decides.
    if not math.isfinite(arr.sum()):
        if not np.isfinite(arr).all():
            raise NumericalError(f"non-finite values produced by op '{op}'")


def _make(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    bwd: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    _ensure_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bwd = bwd
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    # Never mutates in place: a first contribution may alias the consumer's
    # gradient buffer, which stays read-only shared.
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# primitive operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), bwd, "matmul")


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), bwd, "mul")


def scale(a: Tensor, s: float) -> Tensor:
    out_data = a.data * s

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * s)

    return _make(out_data, (a,), bwd, "scale")


def concat(parts: Sequence[Tensor], axis: int) -> Tensor:
    if not parts:
        raise ShapeError("concat: empty input")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g: np.ndarray) -> None:
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad:
                _accumulate(p, piece)

    return _make(out_data, tuple(parts), bwd, "concat")


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g.reshape(a.shape))

    return _make(out_data, (a,), bwd, "reshape")


def _slice(a: Tensor, key) -> Tensor:
    out_data = a.data[key]

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[key] = g
            _accumulate(a, full)

    return _make(out_data, (a,), bwd, "slice")


def roll(a: Tensor, shift: int, axis: int) -> Tensor:
    """Circular shift; used for the location-based attention kernel."""
    out_data = np.roll(a.data, shift, axis=axis)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, np.roll(g, -shift, axis=axis))

    return _make(out_data, (a,), bwd, "roll")


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    e = np.exp(-np.abs(x))
    out_data = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd, "tanh")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out_data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            sig = 1.0 / (1.0 + np.exp(-np.clip(x, -60.0, 60.0)))
            _accumulate(a, g * sig)

    return _make(out_data, (a,), bwd, "softplus")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out_data = ex / ex.sum(axis=axis, keepdims=True)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            inner = (g * out_data).sum(axis=axis, keepdims=True)
            _accumulate(a, out_data * (g - inner))

    return _make(out_data, (a,), bwd, "softmax")


def power(base: Tensor, exponent: Tensor) -> Tensor:
    """Elementwise ``base ** exponent`` for positive bases.

    Bases are floored at 1e-12 so attention weights that underflow to
    exactly zero keep a finite derivative with respect to the exponent.
    """
    b = np.maximum(base.data, _POWER_FLOOR)
    try:
        out_data = b ** exponent.data
    except ValueError as exc:
        raise ShapeError(
            f"power: shapes {base.shape} and {exponent.shape} do not broadcast"
        ) from exc

    def bwd(g: np.ndarray) -> None:
        if base.requires_grad:
            mask = base.data > _POWER_FLOOR
            gb = g * exponent.data * b ** (exponent.data - 1.0) * mask
            _accumulate(base, _unbroadcast(gb, base.shape))
        if exponent.requires_grad:
            ge = g * out_data * np.log(b)
            _accumulate(exponent, _unbroadcast(ge, exponent.shape))

    return _make(out_data, (base, exponent), bwd, "power")


def cosine_similarity(key: Tensor, memory: Tensor) -> Tensor:
    """Row-wise cosine similarity between a key and every memory slot.

    ``key`` is (B, M) and ``memory`` is (B, N, M); the result is (B, N).
    The denominator is floored at ``COSINE_EPS``, which defines the
    similarity against a zero-norm key or slot as (numerically) zero.
    """
    if key.data.ndim != 2 or memory.data.ndim != 3 or key.shape != (
        memory.shape[0],
        memory.shape[2],
    ):
        raise ShapeError(
            f"cosine_similarity: key {key.shape} incompatible with memory {memory.shape}"
        )
    k, m = key.data, memory.data
    dots = np.einsum("bm,bnm->bn", k, m)
    kn2 = (k * k).sum(axis=1, keepdims=True)  # (B, 1)
    mn2 = (m * m).sum(axis=2)  # (B, N)
    prod = np.sqrt(kn2) * np.sqrt(mn2)
    denom = np.maximum(prod, COSINE_EPS)
    unfloored = prod > COSINE_EPS
    out_data = dots / denom

    def bwd(g: np.ndarray) -> None:
        gd = g / denom  # (B, N)
        corr = g * out_data * unfloored / np.maximum(prod, COSINE_EPS)
        if key.requires_grad:
            gk = np.einsum("bn,bnm->bm", gd, m)
            gk -= (corr * prod).sum(axis=1, keepdims=True) * k / np.maximum(kn2, 1e-30)
            _accumulate(key, gk)
        if memory.requires_grad:
            gm = gd[:, :, None] * k[:, None, :]
            gm -= (corr * prod / np.maximum(mn2, 1e-30))[:, :, None] * m
            _accumulate(memory, gm)

    return _make(out_data, (key, memory), bwd, "cosine_similarity")


def sum_reduce(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g: np.ndarray) -> None:
        if a.requires_grad:
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(out_data, (a,), bwd, "sum_reduce")


def mean_reduce(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_reduce(a, axis=axis, keepdims=keepdims), 1.0 / n)


def square(a: Tensor) -> Tensor:
    return mul(a, a)


# ---------------------------------------------------------------------------
# gradient collection and the optimizer


def grads_of(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient map after a backward pass; unreached tensors map to zero."""
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


@dataclass
class AdamState:
    """First/second moment estimates plus the shared step counter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One Adam update, in place, from the gradients stored on ``params``.

    Uses the standard defaults (lr 1e-3, betas 0.9/0.999, eps 1e-8) unless
    the state says otherwise. A missing gradient counts as zero.
    """
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != param shape {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        if m.shape != p.data.shape or v.shape != p.data.shape:
            raise ShapeError(f"adam_step: state shape mismatch for '{name}'")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
