"""Reversible Hamiltonian blocks and full network assembly.

A Hamiltonian block splits the channels into Y (first half) and Z (second
half) and takes one Verlet step

    Y' = Y + h K1^T relu(BN(K1 Z + b1))
    Z' = Z - h K2^T relu(BN(K2 Y' + b2))

which is algebraically invertible whenever BN is an affine map (eval mode).
"""

from __future__ import annotations

from dataclasses import InitVar, asdict, dataclass, field

import numpy as np

from .functional import (
    BatchNormState,
    avg_pool,
    batchnorm,
    conv1x1,
    conv2d,
    conv2d_transpose,
    flatten,
)
from .kernels import OPERATOR_FAMILIES, KernelSpec
from .nonlocal_block import NonlocalBlock
from .tensor import ShapeError, Tensor, as_tensor, check_finite, concat, relu, split


def _he(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    return Tensor((rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype), requires_grad=True)


def _zeros(n: int, dtype) -> Tensor:
    return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


@dataclass
class HamiltonianBlock:
    channels: int
    h: float = 0.05
    kernel_size: int = 3
    dtype: type = np.float64
    rng: InitVar[np.random.Generator | None] = None

    def __post_init__(self, rng):
        if self.channels % 2:
            raise ShapeError(f"channel count {self.channels} cannot be split into Y and Z halves")
        rng = rng if rng is not None else np.random.default_rng(0)
        half = self.channels // 2
        k = self.kernel_size
        self.k1 = _he(rng, (k, k, half, half), k * k * half, self.dtype)
        self.k2 = _he(rng, (k, k, half, half), k * k * half, self.dtype)
        self.b1 = _zeros(half, self.dtype)
        self.b2 = _zeros(half, self.dtype)
        self.bn1 = BatchNormState(half, dtype=self.dtype)
        self.bn2 = BatchNormState(half, dtype=self.dtype)

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        return {
            f"{prefix}k1": self.k1,
            f"{prefix}b1": self.b1,
            f"{prefix}bn1.scale": self.bn1.scale,
            f"{prefix}bn1.shift": self.bn1.shift,
            f"{prefix}k2": self.k2,
            f"{prefix}b2": self.b2,
            f"{prefix}bn2.scale": self.bn2.scale,
            f"{prefix}bn2.shift": self.bn2.shift,
        }

    def set_mode(self, mode: str) -> None:
        self.bn1.mode = mode
        self.bn2.mode = mode

    def _force(self, u, k, b, bn) -> Tensor:
        act = relu(batchnorm(conv2d(u, k, b), bn))
        check_finite(act, "hamiltonian block activation")
        return conv2d_transpose(act, k)

    def step(self, y, z) -> tuple[Tensor, Tensor]:
        y, z = as_tensor(y), as_tensor(z)
        if y.shape != z.shape:
            raise ShapeError(f"Y and Z differ in shape: {y.shape} vs {z.shape}")
        y_new = y + self._force(z, self.k1, self.b1, self.bn1) * self.h
        z_new = z - self._force(y_new, self.k2, self.b2, self.bn2) * self.h
        return y_new, z_new

    def inverse(self, y_new, z_new) -> tuple[Tensor, Tensor]:
        if self.bn1.mode != "eval" or self.bn2.mode != "eval":
            raise RuntimeError("inversion needs eval-mode batch norm (train-mode statistics are not cached)")
        y_new, z_new = as_tensor(y_new), as_tensor(z_new)
        z = z_new + self._force(y_new, self.k2, self.b2, self.bn2) * self.h
        y = y_new - self._force(z, self.k1, self.b1, self.bn1) * self.h
        return y, z

    def __call__(self, x) -> Tensor:
        y, z = split(as_tensor(x), 2, axis=-1)
        y, z = self.step(y, z)
        return concat([y, z], axis=-1)

    def invert(self, x) -> Tensor:
        y, z = split(as_tensor(x), 2, axis=-1)
        y, z = self.inverse(y, z)
        return concat([y, z], axis=-1)


def hamiltonian_step(y, z, block: HamiltonianBlock) -> tuple[Tensor, Tensor]:
    return block.step(y, z)


def hamiltonian_step_inverse(y_new, z_new, block: HamiltonianBlock) -> tuple[Tensor, Tensor]:
    return block.inverse(y_new, z_new)


# ---------------------------------------------------------------------------
# network


@dataclass
class NetworkConfig:
    units: int = 3
    m: int = 6
    channels: tuple[int, ...] = (32, 64, 112)
    in_channels: int = 3
    input_conv_filters: int = 32
    nonlocal_family: str = "none"
    nonlocal_after: int = 2
    stages: int = 2
    nl_pool: tuple[int, ...] = (2, 2, 2)
    lam: float = 0.1
    s: float | None = None
    kernel_n: int = 2
    include_constant: bool = True
    factorize: bool = True
    head: str = "classifier"
    classes: int = 10
    final_pool: int = 2
    pool_between_units: bool = True
    h: float = 0.05
    dtype: str = "float64"

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if isinstance(self.nl_pool, int):
            self.nl_pool = (self.nl_pool,) * self.units
        self.nl_pool = tuple(int(p) for p in self.nl_pool)
        if len(self.channels) != self.units:
            raise ValueError(f"{self.units} units need {self.units} channel widths, got {self.channels}")
        if len(self.nl_pool) != self.units:
            raise ValueError("nl_pool needs one entry per unit")
        odd = [c for c in self.channels if c % 2]
        if odd:
            raise ValueError(f"channel widths must be even for the Y/Z partition, got {odd}")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.head not in ("classifier", "dense"):
            raise ValueError("head must be 'classifier' or 'dense'")
        if self.nonlocal_family != "none" and self.nonlocal_family not in OPERATOR_FAMILIES:
            known = ("none",) + tuple(OPERATOR_FAMILIES)
            raise ValueError(f"nonlocal family must be one of {known}")
        if self.head == "dense":
            self.pool_between_units = False

    @property
    def has_nonlocal(self) -> bool:
        return self.nonlocal_family != "none"

    @property
    def nonlocal_position(self) -> int:
        """Index (1-based) of the Hamiltonian block that the nonlocal block follows."""
        return min(self.nonlocal_after, self.m)

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(
            family=OPERATOR_FAMILIES[self.nonlocal_family],
            lam=self.lam,
            s=self.s,
            n=self.kernel_n,
            include_constant=self.include_constant,
        )

    def layer_count(self) -> int:
        """Initial conv + 4 layers per Hamiltonian block + head; 12m + 2 for three units."""
        return 1 + 4 * self.m * self.units + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["nl_pool"] = list(self.nl_pool)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        d["nl_pool"] = tuple(d["nl_pool"])
        return cls(**d)


@dataclass
class Unit:
    blocks: list[HamiltonianBlock]
    nonlocal_block: NonlocalBlock | None
    nonlocal_position: int

    def __call__(self, x) -> Tensor:
        for j, block in enumerate(self.blocks, start=1):
            x = block(x)
            if self.nonlocal_block is not None and j == self.nonlocal_position:
                x = self.nonlocal_block(x)
        return x


@dataclass
class Network:
    cfg: NetworkConfig
    seed: int = 0
    units: list[Unit] = field(init=False)

    def __post_init__(self):
        cfg = self.cfg
        dt = np.dtype(cfg.dtype).type
        rng = np.random.default_rng(self.seed)
        c0 = cfg.input_conv_filters
        self.init_w = _he(rng, (3, 3, cfg.in_channels, c0), 9 * cfg.in_channels, dt)
        self.init_b = _zeros(c0, dt)
        self.init_bn = BatchNormState(c0, dtype=dt)
        # 1x1 + ReLU widening ahead of each unit whose input width differs
        self.expand: list[tuple[Tensor, Tensor] | None] = []
        self.units = []
        prev = c0
        for u, width in enumerate(cfg.channels):
            if width != prev:
                self.expand.append((_he(rng, (prev, width), prev, dt), _zeros(width, dt)))
            else:
                self.expand.append(None)
            blocks = [HamiltonianBlock(width, h=cfg.h, dtype=dt, rng=rng) for _ in range(cfg.m)]
            nl = None
            if cfg.has_nonlocal:
                nl = NonlocalBlock(
                    width,
                    spec=cfg.kernel_spec(),
                    h=cfg.h,
                    stages=cfg.stages,
                    pool=cfg.nl_pool[u],
                    factorize=cfg.factorize,
                    dtype=dt,
                    rng=rng,
                )
            self.units.append(Unit(blocks, nl, cfg.nonlocal_position))
            prev = width
        self.head_w: Tensor
        if cfg.head == "classifier":
            self._head_in = None  # flattened size is known only after the first forward pass
            self.head_w = None
        else:
            self.head_w = _he(rng, (prev, cfg.classes), prev, dt)
        self.head_b = _zeros(cfg.classes, dt)
        self._head_rng = rng
        self._dtype = dt

    # -- bookkeeping -----------------------------------------------------

    def _ensure_head(self, flat_size: int) -> None:
        if self.head_w is None:
            self.head_w = _he(self._head_rng, (flat_size, self.cfg.classes), flat_size, self._dtype)
        elif self.head_w.shape[0] != flat_size:
            raise ShapeError(f"classifier expects {self.head_w.shape[0]} features, got {flat_size}")

    def materialize(self, input_hw: tuple[int, int]) -> "Network":
        """Create the classifier weights for inputs of spatial size ``input_hw``."""
        if self.cfg.head == "classifier" and self.head_w is None:
            self._ensure_head(self.feature_shape(input_hw)[0] * self.feature_shape(input_hw)[1] * self.cfg.channels[-1])
        return self

    def feature_shape(self, input_hw: tuple[int, int]) -> tuple[int, int]:
        h, w = input_hw
        if self.cfg.pool_between_units:
            for _ in range(self.cfg.units - 1):
                h, w = h // 2, w // 2
        if self.cfg.head == "classifier":
            p = self.cfg.final_pool
            h, w = h // p, w // p
        if h < 1 or w < 1:
            raise ShapeError(f"input {input_hw} is too small for the pooling in this configuration")
        return h, w

    def parameters(self) -> dict[str, Tensor]:
        out = {"init.w": self.init_w, "init.b": self.init_b, "init.bn.scale": self.init_bn.scale, "init.bn.shift": self.init_bn.shift}
        for u, unit in enumerate(self.units):
            if self.expand[u] is not None:
                out[f"unit{u}.expand.w"], out[f"unit{u}.expand.b"] = self.expand[u]
            for j, block in enumerate(unit.blocks):
                out.update(block.parameters(f"unit{u}.block{j}."))
            if unit.nonlocal_block is not None:
                out.update(unit.nonlocal_block.parameters(f"unit{u}.nonlocal."))
        if self.head_w is not None:
            out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        for name, t in out.items():
            t.name = name
        return out

    def batchnorm_states(self) -> dict[str, BatchNormState]:
        out = {"init.bn": self.init_bn}
        for u, unit in enumerate(self.units):
            for j, block in enumerate(unit.blocks):
                out[f"unit{u}.block{j}.bn1"] = block.bn1
                out[f"unit{u}.block{j}.bn2"] = block.bn2
            nl = unit.nonlocal_block
            if nl is not None and not nl.plain_mode:
                out[f"unit{u}.nonlocal.bn1"] = nl.bn[0]
                out[f"unit{u}.nonlocal.bn2"] = nl.bn[1]
        return out

    def set_mode(self, mode: str) -> "Network":
        for bn in self.batchnorm_states().values():
            bn.mode = mode
        return self

    def train(self) -> "Network":
        return self.set_mode("train")

    def eval(self) -> "Network":
        return self.set_mode("eval")

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def layer_count(self) -> int:
        return self.cfg.layer_count()

    # -- forward -----------------------------------------------------------

    def features(self, x) -> Tensor:
        x = as_tensor(x)
        if x.dtype != self._dtype:
            x = Tensor(x.data.astype(self._dtype))
        if x.ndim != 4 or x.shape[-1] != self.cfg.in_channels:
            raise ShapeError(f"expected (B, H, W, {self.cfg.in_channels}) input, got {x.shape}")
        out = relu(batchnorm(conv2d(x, self.init_w, self.init_b), self.init_bn))
        for u, unit in enumerate(self.units):
            if u > 0 and self.cfg.pool_between_units:
                out = avg_pool(out, 2)
            if self.expand[u] is not None:
                w, b = self.expand[u]
                out = relu(conv1x1(out, w) + b)
            out = unit(out)
        return out

    def __call__(self, x) -> Tensor:
        feats = self.features(x)
        if self.cfg.head == "dense":
            return conv1x1(feats, self.head_w) + self.head_b
        pooled = avg_pool(feats, self.cfg.final_pool)
        flat = flatten(pooled)
        self._ensure_head(flat.shape[1])
        return flat @ self.head_w + self.head_b

    forward = __call__


def build_network(cfg: NetworkConfig, seed: int = 0, input_hw: tuple[int, int] | None = None) -> Network:
    """Deterministically initialized network; pass ``input_hw`` to create the classifier eagerly."""
    net = Network(cfg, seed=seed)
    if input_hw is not None:
        net.materialize(input_hw)
    return net


def forward(net: Network, x) -> Tensor:
    return net(x)
