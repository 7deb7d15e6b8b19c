"""Gamma function and the normalizing constants of the nonlocal operators."""

from __future__ import annotations

import math

EULER_GAMMA = 0.5772156649015329

# Lanczos approximation, g = 7, nine coefficients
_LANCZOS_G = 7
_LANCZOS_COEF = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)


def gamma_fn(x: float) -> float:
    """Gamma function for real ``x``; reflection formula below 1/2.

    Raises ValueError at the poles (0, -1, -2, ...).
    """
    x = float(x)
    if x <= 0 and x == math.floor(x):
        raise ValueError(f"gamma has a pole at {x}")
    if x < 0.5:
        return math.pi / (math.sin(math.pi * x) * gamma_fn(1.0 - x))
    x -= 1.0
    acc = _LANCZOS_COEF[0]
    for k in range(1, len(_LANCZOS_COEF)):
        acc += _LANCZOS_COEF[k] / (x + k)
    t = x + _LANCZOS_G + 0.5
    return math.sqrt(2 * math.pi) * t ** (x + 0.5) * math.exp(-t) * acc


def fractional_constant(n: int, s: float) -> float:
    """c_{n,s} = 4^s Gamma(n/2 + s) / (pi^{n/2} |Gamma(-s)|), 0 < s < 1."""
    if not 0 < s < 1:
        raise ValueError(f"fractional Laplacian needs 0 < s < 1, got {s}")
    return 4**s * gamma_fn(n / 2 + s) / (math.pi ** (n / 2) * abs(gamma_fn(-s)))


def riesz_constant(n: int, s: float) -> float:
    """c_{n,-s} = Gamma(n/2 - s) / (4^s pi^{n/2} Gamma(s)), 0 < s < n/2."""
    if not 0 < s < n / 2:
        raise ValueError(
            f"Riesz potential needs 0 < s < n/2 (= {n / 2}), got {s}; "
            "the symbol is not a tempered distribution otherwise"
        )
    return gamma_fn(n / 2 - s) / (4**s * math.pi ** (n / 2) * gamma_fn(s))


def log_constant(n: int) -> float:
    """c_n = 1 / ((4 pi)^{n/2} Gamma(n/2)), used with the s = n/2 log kernel."""
    return 1.0 / ((4 * math.pi) ** (n / 2) * gamma_fn(n / 2))


def operator_constant(n: int, s: float, family: str) -> float:
    if n < 1:
        raise ValueError("dimension n must be >= 1")
    if family in ("dot", "gaussian"):
        return 1.0
    if family == "fractional":
        return fractional_constant(n, s)
    if family == "riesz":
        return riesz_constant(n, s)
    if family == "log":
        if not math.isclose(s, n / 2):
            raise ValueError(f"log kernel is the s = n/2 case, got s={s}, n={n}")
        return log_constant(n)
    raise ValueError(f"unknown kernel family {family!r}")
