"""Continuous-side checks: nonlocal diffusion flows and the fractional Laplacian symbol.

``simulate_diffusion`` integrates u_t(x) = sum_y w(x, y) (u(y) - u(x)) with
forward Euler. For symmetric nonnegative w the exact flow conserves the mean
and lets the L2 norm and the variance decay; the Euler map keeps these
properties when dt <= 1 / max_x sum_y w(x, y).

``fractional_laplacian_apply`` evaluates the singular integral

    (-Delta)^s u(x) = c_{n,s} sum_{y != x} (u(x) - u(y)) / |x - y|^{n+2s} dx^n

by midpoint quadrature on a periodic grid, skipping the cell at y = x.
"""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .special import fractional_constant


class StepBoundWarning(RuntimeWarning):
    """Forward Euler step exceeds the decay-preserving bound."""


@dataclass
class GridField:
    """Values on a periodic 1-D or 2-D grid with uniform ``spacing``."""

    values: np.ndarray
    spacing: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim not in (1, 2):
            raise ValueError("grid fields are 1-D or 2-D")
        if self.spacing <= 0:
            raise ValueError("grid spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid field has non-finite values")

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape


# ---------------------------------------------------------------------------
# nonlocal diffusion


@dataclass
class DiffusionTrajectory:
    states: np.ndarray  # (steps + 1, n) flattened fields
    dt: float
    bound: float
    l2: np.ndarray = field(init=False)
    variance: np.ndarray = field(init=False)
    mean: np.ndarray = field(init=False)

    def __post_init__(self):
        self.l2 = np.sqrt((self.states**2).sum(axis=1))
        self.variance = self.states.var(axis=1)
        self.mean = self.states.mean(axis=1)

    @property
    def within_bound(self) -> bool:
        return self.dt <= self.bound

    def decay_holds(self, rtol: float = 1e-12) -> bool:
        """L2 norm and variance nonincreasing at every step (up to rounding)."""
        tol_l2 = rtol * max(self.l2[0], 1.0)
        tol_var = rtol * max(self.variance[0], 1.0)
        return bool(np.all(np.diff(self.l2) <= tol_l2) and np.all(np.diff(self.variance) <= tol_var))


def step_bound(omega: np.ndarray) -> float:
    """Largest dt for which forward Euler provably keeps the decay: 1 / max row sum."""
    rows = np.asarray(omega).sum(axis=1)
    top = float(rows.max()) if rows.size else 0.0
    return math.inf if top <= 0 else 1.0 / top


def simulate_diffusion(u0, omega, dt: float, steps: int) -> DiffusionTrajectory:
    """Forward Euler for u' = (omega - diag(rowsum)) u on flattened grid values."""
    u = np.asarray(u0.values if isinstance(u0, GridField) else u0, dtype=float).reshape(-1)
    omega = np.asarray(omega, dtype=float)
    n = u.size
    if omega.shape != (n, n):
        raise ValueError(f"kernel shape {omega.shape} does not match {n} grid points")
    if np.any(omega < 0):
        raise ValueError("kernel must be nonnegative")
    if not np.allclose(omega, omega.T, rtol=0, atol=1e-14 * max(1.0, np.abs(omega).max())):
        raise ValueError("kernel must be symmetric")
    if not (0 < dt < math.inf) or steps < 0:
        raise ValueError("dt must be positive and finite, and steps nonnegative")
    bound = step_bound(omega)
    if dt > bound:
        warnings.warn(f"dt={dt:g} exceeds the step bound {bound:g}; decay is not guaranteed", StepBoundWarning, stacklevel=2)
    rows = omega.sum(axis=1)
    states = np.empty((steps + 1, n))
    states[0] = u
    for t in range(steps):
        u = u + dt * (omega @ u - rows * u)
        states[t + 1] = u
    return DiffusionTrajectory(states, dt, bound)


def two_point_difference(d0: float, w: float, dt: float, steps: int) -> float:
    """Closed form of u1 - u2 for the two-point system: d0 (1 - 2 w dt)^steps."""
    return d0 * (1.0 - 2.0 * w * dt) ** steps


def random_symmetric_kernel(n: int, rng: np.random.Generator, density: float = 1.0) -> np.ndarray:
    a = rng.random((n, n)) * (rng.random((n, n)) < density)
    w = np.triu(a, 1)
    return w + w.T


# ---------------------------------------------------------------------------
# fractional Laplacian


def _periodic_weights_1d(offsets: np.ndarray, length: float, exponent: float, images: int) -> np.ndarray:
    # sum over periodic copies |r + mL|^-exponent, |m| <= images, plus the integral tail
    r = offsets[:, None] + length * np.arange(-images, images + 1)[None, :]
    w = (np.abs(r) ** -exponent).sum(axis=1)
    edge = (images + 0.5) * length
    # both tails beyond the last image, int_{edge}^inf t^-exponent dt / L (offset shift negligible)
    w += 2.0 * edge ** (1.0 - exponent) / ((exponent - 1.0) * length)
    return w


def fractional_kernel_weights(shape: tuple[int, ...], spacing: float, s: float, radius: int | None = None, periodize: bool = True):
    """Offsets (k, dim) and quadrature weights c * dx^n / |offset|^{n+2s} of the stencil.

    ``radius`` bounds each offset component (in grid points; default half the
    grid). With ``periodize`` every weight also collects the periodic images
    of its offset, so the stencil represents the integral over all of R^n for
    periodic fields. In 1-D the image sum is closed by an integral tail; in
    2-D it is truncated at a few periods.
    """
    if not 0.0 < s < 1.0:
        raise ValueError("fractional order s must lie in (0, 1)")
    n = len(shape)
    exponent = n + 2.0 * s
    c = fractional_constant(n, s)
    half = [m // 2 for m in shape]
    radius = min(half) if radius is None else int(radius)
    if radius < 1:
        raise ValueError("quadrature radius must be at least one grid point")
    ranges = []
    for m in shape:
        lo = -min(radius, (m - 1) // 2 if m % 2 else m // 2 - 1)
        hi = min(radius, m // 2)
        ranges.append(np.arange(lo, hi + 1))
    offsets = np.array([o for o in itertools.product(*ranges) if any(o)], dtype=float)
    if n == 1:
        if periodize:
            w = _periodic_weights_1d(offsets[:, 0] * spacing, shape[0] * spacing, exponent, images=2000)
        else:
            w = np.abs(offsets[:, 0] * spacing) ** -exponent
    else:
        lengths = np.array(shape, dtype=float) * spacing
        images = 3 if periodize else 0
        w = np.zeros(len(offsets))
        for img in itertools.product(range(-images, images + 1), repeat=n):
            disp = offsets * spacing + np.array(img) * lengths
            w += np.sqrt((disp**2).sum(axis=1)) ** -exponent
    return offsets.astype(int), c * w * spacing**n


def fractional_laplacian_apply(u: GridField, s: float, radius: int | None = None, periodize: bool = True) -> GridField:
    """Midpoint quadrature of the fractional Laplacian on a periodic grid."""
    offsets, weights = fractional_kernel_weights(u.shape, u.spacing, s, radius, periodize)
    vals = u.values
    out = np.zeros_like(vals)
    axes = tuple(range(vals.ndim))
    for off, w in zip(offsets, weights):
        out += w * (vals - np.roll(vals, tuple(-o for o in off), axis=axes))
    return GridField(out, u.spacing)


def exact_symbol(xi: float, s: float) -> float:
    return (2.0 * math.pi * abs(xi)) ** (2.0 * s)


@dataclass
class SymbolMeasurement:
    xi: float
    s: float
    points: int
    measured: float
    exact: float

    @property
    def relative_error(self) -> float:
        return abs(self.measured - self.exact) / self.exact


def measure_symbol(points: int, s: float, xi: int, radius: int | None = None, periodize: bool = True) -> SymbolMeasurement:
    """Apply the quadrature to sin(2 pi xi x) on [0, 1) and read off the amplification.

    The amplification is the mean ratio output / input over the grid points
    where |sin| attains its maximum.
    """
    x = np.arange(points) / points
    u = np.sin(2.0 * math.pi * xi * x)
    out = fractional_laplacian_apply(GridField(u, 1.0 / points), s, radius, periodize).values
    peaks = np.abs(u) > 1.0 - 1e-9
    if not peaks.any():
        peaks = np.abs(u) >= np.abs(u).max() - 1e-12
    measured = float(np.mean(out[peaks] / u[peaks]))
    return SymbolMeasurement(float(xi), s, points, measured, exact_symbol(xi, s))


def discrete_laplacian(u: GridField) -> GridField:
    """Periodic second-difference -Delta_h u (3-point in 1-D, 5-point in 2-D)."""
    v = u.values
    out = np.zeros_like(v)
    for ax in range(v.ndim):
        out += 2.0 * v - np.roll(v, 1, axis=ax) - np.roll(v, -1, axis=ax)
    return GridField(out / u.spacing**2, u.spacing)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# ---------------------------------------------------------------------------
# CSV output


def write_diffusion_csv(path, traj: DiffusionTrajectory) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "l2", "variance"])
        for t, (l2, var) in enumerate(zip(traj.l2, traj.variance)):
            w.writerow([t, repr(float(l2)), repr(float(var))])


def write_symbol_csv(path, rows: list[SymbolMeasurement]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["xi", "s", "points", "measured_symbol", "exact_symbol"])
        for r in rows:
            w.writerow([r.xi, r.s, r.points, repr(r.measured), repr(r.exact)])
