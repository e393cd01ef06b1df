"""Dense float64 tensors with a reverse-mode gradient tape.

Everything downstream (both attention pathways, the gate, the recommender)
runs on this substrate. Forward arithmetic is plain numpy on float64
arrays; any op that touches a differentiable input records a backward
closure, and ``GradTape`` linearizes the recorded ops so replaying them in
reverse accumulates gradients into every reachable parameter.

Design points:
  * float64 only, so finite-difference checks are decisive.
  * a fully masked softmax slice yields zeros, not NaN (a query with no
    visible keys contributes nothing).
  * forward ops are deterministic: identical inputs give bit-identical
    outputs.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray

__all__ = [
    "Tensor",
    "GradTape",
    "no_grad",
    "parameter",
    "matmul",
    "concat",
    "masked_softmax",
    "log_sum_exp",
    "layer_norm",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "power",
    "take_rows",
    "take_along_last",
    "zero_grads",
]

_STATE = threading.local()


def _grad_enabled() -> bool:
    return getattr(_STATE, "grad_enabled", True)


class no_grad:
    """Context manager that stops ops from recording backward closures.

    Purely an allocation saver for evaluation paths; thread-local, so
    models evaluating on other threads are unaffected.
    """

    def __enter__(self):
        self._prev = _grad_enabled()
        _STATE.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _STATE.grad_enabled = self._prev
        return False


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse-mode autodiff."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data: Array = np.asarray(data, dtype=np.float64)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[Array], None] | None = None

    # -- introspection -------------------------------------------------

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
        return float(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph plumbing --------------------------------------------------

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: Array | None = None) -> None:
        GradTape(self).replay(grad)

    # -- operators -------------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


class GradTape:
    """Linearized record of the primitive ops reachable from a root tensor.

    Walking the define-by-run graph from the root yields the ops in
    execution order; replaying the record in reverse accumulates gradients
    into every tensor with ``requires_grad`` set.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.ops: list[Tensor] = _linearize(root)

    def replay(self, grad: Array | None = None) -> None:
        root = self.root
        if grad is None:
            if root.size != 1:
                raise ValueError(
                    "backward() without an explicit gradient needs a scalar root, "
                    f"got shape {root.shape}"
                )
            grad = np.ones_like(root.data)
        _accumulate(root, np.asarray(grad, dtype=np.float64))
        for node in reversed(self.ops):
            if node.grad is None or node._backward is None:
                continue
            node._backward(node.grad)

    def gradients(self, params: dict[str, Tensor]) -> dict[str, Array]:
        """Gradient arrays per named parameter (zeros when unreached)."""
        return {
            name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()
        }


def _linearize(root: Tensor) -> list[Tensor]:
    # Iterative post-order DFS: inputs appear before the ops that consume them.
    order: list[Tensor] = []
    visited: set[int] = {id(root)}
    stack: list[tuple[Tensor, Iterable[Tensor]]] = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        pushed = False
        for p in parents:
            if p._backward is not None and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                pushed = True
                break
        if not pushed:
            stack.pop()
            if node._backward is not None:
                order.append(node)
    return order


def parameter(data, rng: np.random.Generator | None = None, scale: float | None = None) -> Tensor:
    """Learnable tensor; with ``rng`` given, ``data`` is a shape to initialize."""
    if rng is not None:
        shape = tuple(data)
        if scale is None:
            # Glorot uniform for >=2-D shapes, small normal otherwise.
            if len(shape) >= 2:
                limit = np.sqrt(6.0 / (shape[-2] + shape[-1]))
                return Tensor(rng.uniform(-limit, limit, shape), requires_grad=True)
            return Tensor(rng.normal(0.0, 0.02, shape), requires_grad=True)
        return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)
    return Tensor(data, requires_grad=True)


def zero_grads(params: Iterable[Tensor] | dict[str, Tensor]) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# op machinery


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: Sequence[Tensor], backward: Callable[[Array], None]) -> Tensor:
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``g`` back down to ``shape`` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g / b.data, a.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    p = float(p)
    out_data = a.data**p

    def backward(g: Array) -> None:
        _accumulate(a, g * p * a.data ** (p - 1.0))

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)

    def backward(g: Array) -> None:
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def backward(g: Array) -> None:
        _accumulate(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    # Branch on sign to avoid overflow in exp.
    out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward(g: Array) -> None:
        _accumulate(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# shape / indexing ops


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    old_shape = a.shape

    def backward(g: Array) -> None:
        _accumulate(a, g.reshape(old_shape))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    inverse = tuple(np.argsort(axes))

    def backward(g: Array) -> None:
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def getitem(a, idx) -> Tensor:
    """Basic (slice/int/ellipsis) indexing; advanced indexing has its own ops."""
    a = _as_tensor(a)

    def backward(g: Array) -> None:
        buf = np.zeros_like(a.data)
        buf[idx] = g
        _accumulate(a, buf)

    return _make(a.data[idx], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g: Array) -> None:
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def take_rows(table, ids: Array) -> Tensor:
    """Gather rows of a 2-D table by integer id; scatter-add on backward."""
    table = _as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)

    def backward(g: Array) -> None:
        if not table.requires_grad:
            return
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids, g)
        _accumulate(table, buf)

    return _make(table.data[ids], (table,), backward)


def take_along_last(a, idx: Array) -> Tensor:
    """Pick one entry per row along the last axis (``idx`` shaped like a[..., 0])."""
    a = _as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)[..., None]

    def backward(g: Array) -> None:
        buf = np.zeros_like(a.data)
        np.put_along_axis(buf, idx, g[..., None], axis=-1)
        _accumulate(a, buf)

    return _make(np.take_along_axis(a.data, idx, axis=-1)[..., 0], (a,), backward)


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)

    def backward(g: Array) -> None:
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        n = a.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.shape[i] for i in axis]))
    else:
        n = a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy-style leading-dimension broadcasting."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul requires at least 2-D operands")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")

    def backward(g: Array) -> None:
        _accumulate(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        _accumulate(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), backward)


# ---------------------------------------------------------------------------
# composite / specialty ops


def masked_softmax(logits, mask: Array | None = None, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with an optional boolean visibility mask.

    Masked-out entries behave as logit -inf: they get probability zero and
    receive no gradient. A slice with nothing visible comes back as all
    zeros rather than NaN.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if mask is None:
        mx = x.max(axis=axis, keepdims=True)
        z = np.exp(x - mx)
        s = z.sum(axis=axis, keepdims=True)
        p = z / s
    else:
        try:
            m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        except ValueError:
            raise ValueError(
                f"mask shape {np.asarray(mask).shape} does not broadcast to logits {x.shape}"
            ) from None
        shifted = np.where(m, x, -np.inf)
        mx = shifted.max(axis=axis, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        z = np.exp(shifted - mx)
        s = z.sum(axis=axis, keepdims=True)
        p = np.divide(z, s, out=np.zeros_like(z), where=s > 0)

    def backward(g: Array) -> None:
        inner = (g * p).sum(axis=axis, keepdims=True)
        _accumulate(logits, p * (g - inner))

    return _make(p, (logits,), backward)


def log_sum_exp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Numerically stable log(sum(exp(a))) along ``axis``."""
    a = _as_tensor(a)
    shift = np.max(a.data, axis=axis, keepdims=True)  # constant shift, no grad needed
    out = add(log(tsum(exp(sub(a, Tensor(shift))), axis=axis, keepdims=True)), Tensor(shift))
    if not keepdims:
        out = reshape(out, tuple(n for i, n in enumerate(out.shape) if i != (axis % a.ndim)))
    return out


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise ValueError(f"layer_norm affine params must match last axis {x.shape[-1:]}")
    mu = tmean(x, axis=-1, keepdims=True)
    centered = sub(x, mu)
    var = tmean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(add(var, eps), -0.5)
    return add(mul(mul(centered, inv), gamma), beta)


def affine(x, w, b=None) -> Tensor:
    out = matmul(x, w)
    return out if b is None else add(out, b)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not training or rate <= 0.0:
        return _as_tensor(x)
    if rng is None:
        raise ValueError("training-mode dropout needs an RNG")
    keep = (rng.random(x.shape) >= rate).astype(np.float64) / (1.0 - rate)
    return mul(x, Tensor(keep))
