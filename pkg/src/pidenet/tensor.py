"""Dense tensors with reverse-mode automatic differentiation.

Every tensor wraps a numpy array. Operations on tensors that require
gradients record their parents and a backward closure; ``Tape`` orders the
recorded graph topologically and runs the closures in reverse.

Layout convention for images is batch-major, channel-last: (B, H, W, C).
"""

from __future__ import annotations

import warnings
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float64


class NonFiniteError(FloatingPointError):
    """Raised when NaN or Inf shows up in a checked computation."""


class ShapeError(ValueError):
    pass


class DisconnectedGradientWarning(UserWarning):
    """A requested parameter does not influence the loss; its gradient is zero."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p: float):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=like.dtype if like is not None else None)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    # constants adopt the dtype of the tensor operand so float32 graphs stay float32
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def _make(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    out._op = op
    return out


def sum_leading(a: np.ndarray, keep: int = 1) -> np.ndarray:
    """Sum over all but the last ``keep`` axes.

    Done as a ones-vector product, which is much faster than a strided
    reduction when the kept block is narrow (few channels).
    """
    tail = a.shape[a.ndim - keep :] if keep else ()
    flat = a.reshape(-1, int(np.prod(tail)) if tail else 1)
    if flat.shape[0] == 0:
        return np.zeros(tail, dtype=a.dtype)
    return (np.ones(flat.shape[0], dtype=a.dtype) @ flat).reshape(tail)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead > 0 and grad.shape[lead:] == tuple(shape):
        return sum_leading(grad, len(shape))
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def check_finite(t: Tensor | np.ndarray, where: str) -> None:
    arr = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {where}")


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        )

    return _make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        )

    return _make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        return (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        )

    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape) if b.requires_grad else None
        return ga, gb

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a.data / b.data
    check_finite(out, "div")
    return _make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = a.data**p
    check_finite(out, "pow")

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _make(out, (a,), bw, "pow")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    check_finite(out, "exp")
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    check_finite(out, "log")
    return _make(out, (a,), lambda g: (g / a.data,), "log")


def relu(a) -> Tensor:
    """max(0, x); the subgradient at 0 is taken as 0."""
    a = as_tensor(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _make(a.data[idx], (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def split(a: Tensor, sections: int, axis: int = -1) -> list[Tensor]:
    n = a.shape[axis]
    if n % sections:
        raise ShapeError(f"cannot split extent {n} into {sections} equal parts")
    step = n // sections
    ax = axis % a.ndim
    out = []
    for k in range(sections):
        idx = [slice(None)] * a.ndim
        idx[ax] = slice(k * step, (k + 1) * step)
        out.append(_slice(a, tuple(idx)))
    return out


def _slice(a: Tensor, idx) -> Tensor:
    # basic slicing only; no duplicate indices so plain assignment suffices
    def bw(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _make(a.data[idx], (a,), bw, "slice")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul needs operands with at least 2 dims")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.shape} @ {b.shape}")

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# classification heads


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("softmax of an empty vector")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw, "softmax")


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if x.size == 0:
        raise ShapeError("log_softmax of an empty vector")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def _check_labels(labels: np.ndarray, k: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.dtype.kind not in "iu":
        raise ValueError("class labels must be integers")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"class index out of range for {k} classes")
    return labels


def cross_entropy(probs, labels) -> Tensor:
    """Mean of -log p[label] over the leading axes; ``probs`` sums to 1 on the last axis."""
    probs = as_tensor(probs)
    labels = np.atleast_1d(_check_labels(labels, probs.shape[-1]))
    p2 = reshape(probs, (-1, probs.shape[-1]))
    picked = getitem(p2, (np.arange(p2.shape[0]), labels.reshape(-1)))
    return -mean(log(picked))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Numerically stable fused softmax + cross-entropy, averaged over samples (and pixels)."""
    logits = as_tensor(logits)
    k = logits.shape[-1]
    labels = _check_labels(labels, k).reshape(-1)
    flat = logits.data.reshape(-1, k)
    if flat.shape[0] != labels.shape[0]:
        raise ShapeError("logits and labels disagree on sample count")
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = flat.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return ((g / n) * p.reshape(logits.shape),)

    return _make(np.asarray(loss), (logits,), bw, "softmax_ce")


# ---------------------------------------------------------------------------
# backward pass


class Tape:
    """Topologically ordered record of the graph that produced ``root``.

    ``nodes`` lists every tensor reachable from the root that requires a
    gradient, parents strictly before children.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._index = {id(n): k for k, n in enumerate(self.nodes)}

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    def backward(self) -> dict[int, np.ndarray]:
        """Propagate d(root)/d(node) for every recorded node; keyed by ``id(node)``."""
        root = self.root
        if root.size != 1:
            raise ShapeError("backward needs a scalar loss")
        grads: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node))
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if pg.dtype != parent.data.dtype:
                    pg = pg.astype(parent.data.dtype)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if node._parents:
                # interior gradients are not needed once consumed
                del grads[id(node)]
        return grads


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns a map from each parameter to its gradient and stores it in
    ``param.grad``. Parameters that do not influence the loss receive a zero
    gradient and trigger ``DisconnectedGradientWarning``.
    """
    tape = Tape(loss)
    raw = tape.backward()
    if params is None:
        params = [n for n in tape.nodes if not n._parents]
    out: dict[Tensor, np.ndarray] = {}
    missing = []
    for p in params:
        g = raw.get(id(p))
        if g is None:
            g = np.zeros_like(p.data)
            missing.append(p.name or repr(p))
        p.grad = g
        out[p] = g
    if missing:
        warnings.warn(
            f"parameters disconnected from the loss: {', '.join(missing)}",
            DisconnectedGradientWarning,
            stacklevel=2,
        )
    return out


def parameter(data, name: str | None = None) -> Tensor:
    """A fresh leaf tensor that owns a copy of ``data`` and requires a gradient."""
    arr = np.array(data)
    if arr.dtype.kind != "f":
        arr = arr.astype(DEFAULT_DTYPE)
    return Tensor(arr, requires_grad=True, name=name)
