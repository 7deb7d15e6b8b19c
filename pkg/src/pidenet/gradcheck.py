"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def numerical_gradient(f: Callable[[], Tensor], param: Tensor, step: float = 1e-5) -> np.ndarray:
    """d f / d param by central differences, perturbing ``param.data`` in place."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        fp = float(f().data)
        flat[k] = orig - step
        fm = float(f().data)
        flat[k] = orig
        gflat[k] = (fp - fm) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def gradient_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict[str, float]:
    """Compare reverse-mode gradients of the scalar ``f()`` with central differences.

    Returns the max relative error per parameter (keyed by name or position).
    With ``max_entries`` only a random subset of each parameter's entries is
    probed, which keeps full-network checks affordable.
    """
    loss = f()
    grads = backward(loss, params)
    report = {}
    for pos, p in enumerate(params):
        key = p.name or f"param{pos}"
        analytic = grads[p].reshape(-1)
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            rng = rng or np.random.default_rng(0)
            picks = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            picks = np.arange(flat.size)
        numeric = np.empty(picks.size)
        for n, k in enumerate(picks):
            orig = flat[k]
            flat[k] = orig + step
            fp = float(f().data)
            flat[k] = orig - step
            fm = float(f().data)
            flat[k] = orig
            numeric[n] = (fp - fm) / (2 * step)
        report[key] = relative_error(analytic[picks], numeric, floor)
    return report
