"""Convolution, pooling and batch normalization on channel-last tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _make, as_tensor, check_finite, sum_leading


def _pad_amount(k: int, padding: str) -> int:
    if padding == "same":
        return k // 2
    if padding == "none":
        return 0
    if padding == "full":
        return k - 1
    raise ValueError(f"unknown padding {padding!r}")


def _im2col(xp: np.ndarray, k: int, ho: int, wo: int) -> np.ndarray:
    # (B, ho, wo, C, k, k) window view, copied once into (B*ho*wo, k*k*C) rows
    b, _, _, c = xp.shape
    win = sliding_window_view(xp[:, : ho + k - 1, : wo + k - 1, :], (k, k), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(b * ho * wo, k * k * c)


def conv2d(x, w, bias=None, padding: str = "same") -> Tensor:
    """Stride-1 2-D cross-correlation.

    x: (B, H, W, Cin); w: (k, k, Cin, Cout) with odd k. ``padding`` is
    "same" (zero padding, preserves H and W), "none" (valid) or "full".
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D input and weight, got {x.shape} and {w.shape}")
    k, k2, cin, cout = w.shape
    if k != k2 or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {w.shape[:2]}")
    if x.shape[-1] != cin:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects {cin}")
    check_finite(x, "conv2d input")
    b, h, wd, _ = x.shape
    pad = _pad_amount(k, padding)
    ho, wo = h + 2 * pad - k + 1, wd + 2 * pad - k + 1
    if ho < 1 or wo < 1:
        raise ShapeError("input smaller than kernel")

    if k == 1:
        cols = x.data.reshape(-1, cin)
    else:
        xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
        cols = _im2col(xp, k, ho, wo)
    w2 = w.data.reshape(k * k * cin, cout)
    out = (cols @ w2).reshape(b, ho, wo, cout)
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias, like=x)
        if bias.shape != (cout,):
            raise ShapeError(f"bias shape {bias.shape} != ({cout},)")
        out = out + bias.data
        parents.append(bias)

    def bw(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            if k == 1:
                gx = (g2 @ w2.T).reshape(x.shape)
            else:
                # input gradient is the correlation of g with the flipped, transposed kernel
                back = k - 1 - pad
                gp = np.pad(g, ((0, 0), (back, back), (back, back), (0, 0))) if back else g
                wf = w.data[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * cout, cin)
                gx = (_im2col(gp, k, h, wd) @ wf).reshape(x.shape)
        grads = [gx, gw]
        if bias is not None:
            grads.append(sum_leading(g2))
        return grads

    return _make(out, parents, bw, "conv2d")


def flip_kernel(w) -> Tensor:
    """Spatially flipped, in/out-swapped kernel: the weight of the adjoint convolution."""
    w = as_tensor(w)

    def bw(g):
        return (g.transpose(0, 1, 3, 2)[::-1, ::-1].copy(),)

    return _make(w.data[::-1, ::-1].transpose(0, 1, 3, 2).copy(), (w,), bw, "flip_kernel")


def conv2d_transpose(y, w, padding: str = "same") -> Tensor:
    """Adjoint of ``conv2d(., w, padding)``: maps Cout channels back to Cin.

    For every x, y: <conv2d(x, w), y> == <x, conv2d_transpose(y, w)>.
    """
    y, w = as_tensor(y), as_tensor(w)
    if w.ndim != 4 or y.ndim != 4:
        raise ShapeError("conv2d_transpose expects 4-D input and weight")
    if y.shape[-1] != w.shape[3]:
        raise ShapeError(f"input has {y.shape[-1]} channels, transposed kernel expects {w.shape[3]}")
    adjoint_padding = {"same": "same", "none": "full", "full": "none"}[padding]
    return conv2d(y, flip_kernel(w), padding=adjoint_padding)


def conv1x1(x, w) -> Tensor:
    """Channel mixing with a (Cin, Cout) matrix on any (..., Cin) tensor."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim == 4:
        w = w.reshape(w.shape[2], w.shape[3])
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"input has {x.shape[-1]} channels, weight expects {w.shape[0]}")
    lead = x.shape[:-1]
    return (x.reshape(-1, x.shape[-1]) @ w).reshape(lead + (w.shape[1],))


# ---------------------------------------------------------------------------
# pooling (floor semantics: any remainder border is dropped)


def _pool_view(x: np.ndarray, p: int) -> tuple[np.ndarray, int, int]:
    b, h, w, c = x.shape
    if p < 1:
        raise ValueError("pool size must be >= 1")
    if p > h or p > w:
        raise ShapeError(f"pool size {p} exceeds spatial extent {h}x{w}")
    ho, wo = h // p, w // p
    v = x[:, : ho * p, : wo * p, :].reshape(b, ho, p, wo, p, c)
    return v, ho, wo


def avg_pool(x, p: int) -> Tensor:
    x = as_tensor(x)
    if p == 1:
        return x
    v, ho, wo = _pool_view(x.data, p)
    out = v.mean(axis=(2, 4))

    def bw(g):
        full = np.zeros_like(x.data)
        b, _, _, c = x.shape
        spread = np.broadcast_to(g[:, :, None, :, None, :] / (p * p), (b, ho, p, wo, p, c))
        full[:, : ho * p, : wo * p, :] = spread.reshape(b, ho * p, wo * p, c)
        return (full,)

    return _make(out, (x,), bw, "avg_pool")


def max_pool(x, p: int) -> Tensor:
    x = as_tensor(x)
    if p == 1:
        return x
    v, ho, wo = _pool_view(x.data, p)
    b, _, _, c = x.shape
    patches = v.transpose(0, 1, 3, 2, 4, 5).reshape(b, ho, wo, p * p, c)
    idx = patches.argmax(axis=3)[:, :, :, None, :]
    out = np.take_along_axis(patches, idx, axis=3)[:, :, :, 0, :]

    def bw(g):
        gp = np.zeros((b, ho, wo, p * p, c), dtype=g.dtype)
        np.put_along_axis(gp, idx, g[:, :, :, None, :], axis=3)
        gp = gp.reshape(b, ho, wo, p, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, ho * p, wo * p, c)
        full = np.zeros_like(x.data)
        full[:, : ho * p, : wo * p, :] = gp
        return (full,)

    return _make(out, (x,), bw, "max_pool")


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Per-channel affine parameters plus running statistics.

    Train mode normalizes with batch statistics and updates the running
    averages (``running = momentum * running + (1 - momentum) * batch``);
    eval mode uses the running averages and is an affine map.
    """

    channels: int
    momentum: float = 0.99
    epsilon: float = 1e-5
    mode: str = "train"
    dtype: type = np.float64
    scale: Tensor = field(init=False)
    shift: Tensor = field(init=False)
    running_mean: np.ndarray = field(init=False)
    running_var: np.ndarray = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.scale = Tensor(np.ones(self.channels, dtype=self.dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(self.channels, dtype=self.dtype), requires_grad=True)
        self.running_mean = np.zeros(self.channels, dtype=self.dtype)
        self.running_var = np.ones(self.channels, dtype=self.dtype)


def batchnorm(x, state: BatchNormState, update: bool = True) -> Tensor:
    x = as_tensor(x)
    c = x.shape[-1]
    if c != state.channels:
        raise ShapeError(f"batchnorm over {state.channels} channels got {c}")
    gamma, beta = state.scale, state.shift

    if state.mode == "eval":
        inv = 1.0 / np.sqrt(state.running_var + state.epsilon)
        xhat = (x.data - state.running_mean) * inv
        out = gamma.data * xhat + beta.data

        def bw_eval(g):
            gx = g * (gamma.data * inv)
            return gx, sum_leading(g * xhat), sum_leading(g)

        return _make(out, (x, gamma, beta), bw_eval, "batchnorm_eval")

    if state.mode != "train":
        raise ValueError(f"unknown batchnorm mode {state.mode!r}")
    n = x.size // c
    mu = sum_leading(x.data) / n
    xc = x.data - mu
    var = sum_leading(xc * xc) / n
    inv = 1.0 / np.sqrt(var + state.epsilon)
    xhat = xc * inv
    out = gamma.data * xhat + beta.data
    if update:
        m = state.momentum
        state.running_mean = m * state.running_mean + (1 - m) * mu
        state.running_var = m * state.running_var + (1 - m) * var

    def bw(g):
        gg = sum_leading(g * xhat)
        gb = sum_leading(g)
        gx = (gamma.data * inv / n) * (n * g - gb - xhat * gg)
        return gx, gg, gb

    return _make(out, (x, gamma, beta), bw, "batchnorm")


def flatten(x) -> Tensor:
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


__all__ = [
    "BatchNormState",
    "avg_pool",
    "batchnorm",
    "conv1x1",
    "conv2d",
    "conv2d_transpose",
    "flatten",
    "flip_kernel",
    "max_pool",
]
