"""Pairwise affinities between pixel strips.

A pixel strip is the C-vector at one spatial position. The block input is
viewed as (B, N, C) strips; the (optionally max-pooled) comparison side has
M <= N strips. Five kernel families are supported:

    dot         lam * <theta_i, phi_j>
    gaussian    exp(lam * <theta_i, phi_j>)
    fractional  lam * |theta_i - phi_j|^-(n + 2s)      (0 < s < 1)
    riesz       lam * |theta_i - phi_j|^-(n - 2s)      (0 < s < n/2)
    log         -2 lam log|theta_i - phi_j| - gamma    (s = n/2)

The singular families return 0 wherever the strip distance is below
``ZERO_DISTANCE``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .functional import conv1x1, max_pool
from .special import EULER_GAMMA, operator_constant
from .tensor import ShapeError, Tensor, _make, as_tensor, check_finite, exp, matmul, transpose

FAMILIES = ("dot", "gaussian", "fractional", "riesz", "log")
ZERO_DISTANCE = 1e-12
CLAMP_TOLERANCE = 1e-9

# CLI / config names for the four operator families
OPERATOR_FAMILIES = {
    "diffusion": "dot",
    "fraclap": "fractional",
    "invfraclap": "riesz",
    "log": "log",
}


class NumericalCorruption(ArithmeticError):
    """Squared distance came out clearly negative."""


@dataclass
class KernelSpec:
    family: str = "dot"
    lam: float = 0.1
    s: float | None = None
    n: int = 2
    include_constant: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; choose from {FAMILIES}")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.s is None:
            self.s = self.n / 2 if self.family == "log" else 0.5
        # validates the admissible range of s for the family
        self._constant = operator_constant(self.n, self.s, self.family)

    @property
    def constant(self) -> float:
        return self._constant if self.include_constant else 1.0

    @property
    def difference(self) -> int:
        """+1 for (b_j - b_i), -1 for (b_i - b_j), 0 for a plain weighted sum of b_j."""
        return {"dot": 1, "gaussian": 1, "fractional": -1}.get(self.family, 0)

    @property
    def exponent(self) -> float:
        if self.family == "fractional":
            return self.n + 2 * self.s
        if self.family == "riesz":
            return self.n - 2 * self.s
        raise AttributeError(f"{self.family} kernel has no power-law exponent")


@dataclass
class AffinityMatrix:
    """Affinities (B, N, M) plus the scalar normalizer applied to the aggregate."""

    values: Tensor
    normalizer: float

    def __post_init__(self):
        b, n, m = self.values.shape
        if m > n:
            raise ShapeError(f"comparison side has more strips ({m}) than the input ({n})")
        check_finite(self.values, "affinity matrix")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def row_sums(self) -> Tensor:
        return self.values.sum(axis=2, keepdims=True)


def strips(x) -> Tensor:
    """(B, H, W, C) -> (B, HW, C) in row-major pixel order."""
    x = as_tensor(x)
    b, h, w, c = x.shape
    return x.reshape(b, h * w, c)


def embed(x, weight) -> Tensor:
    """1x1 embedding of strips; ``weight`` is (C, C//2) or (1, 1, C, C//2)."""
    x, weight = as_tensor(x), as_tensor(weight)
    return conv1x1(x, weight)


def embedding_width(channels: int) -> int:
    if channels % 2:
        warnings.warn(f"odd channel count {channels}: embedding width rounded down", stacklevel=2)
    return max(channels // 2, 1)


def subsample_strips(x, p: int) -> Tensor:
    """Max-pool over p x p patches and flatten to strips; p = 1 is the identity."""
    x = as_tensor(x)
    if p < 1:
        raise ValueError("pool size must be >= 1")
    if p > x.shape[1] or p > x.shape[2]:
        raise ShapeError(f"pool size {p} larger than spatial extent {x.shape[1:3]}")
    return strips(max_pool(x, p))


def pairwise_sqdist(a, b) -> Tensor:
    """|a_i - b_j|^2 for (B, N, C) and (B, M, C) via |a|^2 - 2 a.b + |b|^2, clamped at 0."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError(f"embedding widths differ: {a.shape[-1]} vs {b.shape[-1]}")
    na = (a.data * a.data).sum(-1)
    nb = (b.data * b.data).sum(-1)
    raw = na[..., :, None] - 2.0 * (a.data @ np.swapaxes(b.data, -1, -2)) + nb[..., None, :]
    scale = na[..., :, None] + nb[..., None, :] + 1.0
    if np.any(raw < -CLAMP_TOLERANCE * scale):
        raise NumericalCorruption("negative squared distance beyond rounding tolerance")
    keep = raw > 0
    out = np.where(keep, raw, 0.0)

    def bw(g):
        g = g * keep
        ga = 2.0 * (a.data * g.sum(-1)[..., None] - g @ b.data)
        gb = 2.0 * (b.data * np.swapaxes(g, -1, -2).sum(-1)[..., None] - np.swapaxes(g, -1, -2) @ a.data)
        return ga, gb

    return _make(out, (a, b), bw, "pairwise_sqdist")


def _radial_power(d2, exponent: float, lam: float) -> Tensor:
    # lam * d^-exponent with a safe divide at zero distance
    d2 = as_tensor(d2)
    mask = d2.data >= ZERO_DISTANCE**2
    safe = np.where(mask, d2.data, 1.0)
    out = np.where(mask, lam * safe ** (-exponent / 2), 0.0)

    def bw(g):
        return (g * (-exponent / 2) * out / safe,)

    return _make(out, (d2,), bw, "radial_power")


def _log_kernel(d2, lam: float) -> Tensor:
    # -2 lam log d - gamma == -lam log d^2 - gamma; whole entry 0 at zero distance
    d2 = as_tensor(d2)
    mask = d2.data >= ZERO_DISTANCE**2
    safe = np.where(mask, d2.data, 1.0)
    out = np.where(mask, -lam * np.log(safe) - EULER_GAMMA, 0.0)

    def bw(g):
        return (np.where(mask, -lam * g / safe, 0.0),)

    return _make(out, (d2,), bw, "log_kernel")


def kernel_values(theta, phi, spec: KernelSpec) -> Tensor:
    """Raw kernel entries (B, N, M) for embeddings theta (B, N, C') and phi (B, M, C')."""
    theta, phi = as_tensor(theta), as_tensor(phi)
    if theta.shape[-1] != phi.shape[-1]:
        raise ShapeError(f"embedding widths differ: {theta.shape[-1]} vs {phi.shape[-1]}")
    if spec.family in ("dot", "gaussian"):
        dots = matmul(theta, transpose(phi, (0, 2, 1)))
        scaled = dots * spec.lam
        return exp(scaled) if spec.family == "gaussian" else scaled
    d2 = pairwise_sqdist(theta, phi)
    if spec.family == "log":
        return _log_kernel(d2, spec.lam)
    return _radial_power(d2, spec.exponent, spec.lam)


def affinity(theta, phi, spec: KernelSpec, normalizer: float | None = None) -> AffinityMatrix:
    """Affinity matrix with the summation length M as default normalizer."""
    values = kernel_values(theta, phi, spec)
    m = values.shape[2]
    return AffinityMatrix(values=values, normalizer=float(normalizer if normalizer is not None else m))


def direct_distances(theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Reference |theta_i - phi_j| by explicit differences (no expansion)."""
    diff = theta[:, :, None, :] - phi[:, None, :, :]
    return np.sqrt((diff * diff).sum(-1))


def kernel_entry(dist: float, dot: float, spec: KernelSpec) -> float:
    """One scalar kernel entry from a distance and a dot product; used by reference paths."""
    if spec.family == "dot":
        return spec.lam * dot
    if spec.family == "gaussian":
        return math.exp(spec.lam * dot)
    if dist < ZERO_DISTANCE:
        return 0.0
    if spec.family == "log":
        return -2.0 * spec.lam * math.log(dist) - EULER_GAMMA
    return spec.lam * dist ** (-spec.exponent)
