"""Training objective: halved cross-entropy plus weight decay and smoothness decay."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from ..tensor import Tensor, as_tensor, softmax_cross_entropy

# names that receive weight decay: every convolution / dense matrix
_WEIGHT = re.compile(r"(^|\.)(w|k1|k2|theta|phi)$")
_HAM_BLOCK = re.compile(r"^unit(\d+)\.block(\d+)\.(k1|k2)$")


@dataclass
class RegularizerConfig:
    alpha1: float = 2e-4
    alpha2: float = 1e-8
    h: float = 0.05

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("regularization coefficients must be nonnegative")
        if self.h <= 0:
            raise ValueError("h must be positive")


def is_decayed(name: str) -> bool:
    """True for convolution and dense weights; biases and BN parameters are exempt."""
    return bool(_WEIGHT.search(name))


def reg_l2(weights: Iterable[Tensor], alpha1: float) -> Tensor:
    """(alpha1 / 2) * sum of squared Frobenius norms."""
    total = Tensor(np.zeros(()))
    for w in weights:
        w = as_tensor(w)
        total = total + (w * w).sum() * (alpha1 / 2)
    return total


def reg_smooth(block_weights: Iterable[Iterable[Tensor]], alpha2: float, h: float) -> Tensor:
    """alpha2 * h * sum_j sum_k ||(K_{j,k} - K_{j+1,k}) / h||_F^2.

    ``block_weights`` lists the Hamiltonian blocks of one unit in order,
    each as its sequence of weights (K1, K2).
    """
    blocks = [list(b) for b in block_weights]
    total = Tensor(np.zeros(()))
    for prev, nxt in zip(blocks, blocks[1:]):
        if len(prev) != len(nxt):
            raise ValueError("consecutive blocks hold different numbers of weights")
        for a, b in zip(prev, nxt):
            d = as_tensor(a) - as_tensor(b)
            total = total + (d * d).sum() * (alpha2 / h)
    return total


def hamiltonian_weights_by_unit(params: Mapping[str, Tensor]) -> list[list[list[Tensor]]]:
    """Group Hamiltonian K weights as units -> blocks (in order) -> [K1, K2].

    Nonlocal blocks never match, so blocks on either side of one still pair up.
    """
    found: dict[int, dict[int, dict[str, Tensor]]] = {}
    for name, t in params.items():
        m = _HAM_BLOCK.match(name)
        if m:
            u, j, k = int(m.group(1)), int(m.group(2)), m.group(3)
            found.setdefault(u, {}).setdefault(j, {})[k] = t
    return [[[blocks[j]["k1"], blocks[j]["k2"]] for j in sorted(blocks)] for _, blocks in sorted(found.items())]


def regularization(params: Mapping[str, Tensor], reg: RegularizerConfig) -> Tensor:
    total = Tensor(np.zeros(()))
    if reg.alpha1:
        total = total + reg_l2([t for n, t in params.items() if is_decayed(n)], reg.alpha1)
    if reg.alpha2:
        for unit in hamiltonian_weights_by_unit(params):
            total = total + reg_smooth(unit, reg.alpha2, reg.h)
    return total


def loss(logits, labels, params: Mapping[str, Tensor] | None = None, reg: RegularizerConfig | None = None) -> Tensor:
    """0.5 * mean cross-entropy + R1 + R2."""
    ce = softmax_cross_entropy(logits, labels) * 0.5
    if params is None or reg is None:
        return ce
    return ce + regularization(params, reg)
