"""SGD with heavy-ball momentum and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..tensor import Tensor

MILESTONES = (80, 120, 160, 180)
REFERENCE_EPOCHS = 200


@dataclass
class SGD:
    """v <- momentum * v + g;  p <- p - lr * v."""

    momentum: float = 0.9
    velocity: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], lr: float) -> None:
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            v = self.velocity.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[name] = v
            p.data -= (lr * v).astype(p.data.dtype, copy=False)


def sgd_step(params, grads, lr: float, momentum: float = 0.9, state: SGD | None = None) -> SGD:
    """Functional wrapper; returns the optimizer state for the next call."""
    state = state or SGD(momentum=momentum)
    state.step(params, grads, lr)
    return state


def lr_schedule(
    epoch: int,
    base: float = 0.1,
    warmup: float = 0.01,
    milestones: tuple[float, ...] = MILESTONES,
    total_epochs: int | None = None,
) -> float:
    """Learning rate for a 0-based epoch.

    Epoch 0 is a warm-up at ``warmup``; afterwards ``base`` divided by 10 at
    every milestone passed. Passing ``total_epochs`` rescales the milestones
    from the 200-epoch reference run to a shorter one.
    """
    if epoch < 0:
        raise ValueError("epoch must be nonnegative")
    if epoch == 0:
        return warmup
    if total_epochs is not None:
        milestones = tuple(m * total_epochs / REFERENCE_EPOCHS for m in milestones)
    drops = sum(1 for m in milestones if epoch >= m)
    return base * 0.1**drops
