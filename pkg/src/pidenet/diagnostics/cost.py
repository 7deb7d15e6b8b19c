"""Analytic FLOP and parameter counts for a network configuration.

One multiply-add counts as one FLOP. Convolutions cost H*W*k^2*Cin*Cout;
batch norm, ReLU and pooling cost one operation per element they read.
A nonlocal block costs its embeddings, the N x M x C/2 affinity build, one
N x M x C aggregation per stage and the per-stage 1x1 mixing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

from ..hamiltonian import NetworkConfig


@dataclass
class LayerCost:
    name: str
    kind: str
    flops: int
    params: int = 0


@dataclass
class CostReport:
    layers: list[LayerCost] = field(default_factory=list)
    nonlocal_kernel_by_pool: dict[int, int] = field(default_factory=dict)
    layer_count: int = 0

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)

    @property
    def kernel_flops(self) -> int:
        """Affinity build plus aggregation, the part that depends on the pool size."""
        return sum(l.flops for l in self.layers if l.kind == "nonlocal-kernel")

    def by_kind(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for l in self.layers:
            out[l.kind] = out.get(l.kind, 0) + l.flops
        return out

    def to_json(self) -> dict:
        return {
            "total_flops": self.total_flops,
            "total_params": self.total_params,
            "kernel_flops": self.kernel_flops,
            "layer_count": self.layer_count,
            "by_kind": self.by_kind(),
            "nonlocal_kernel_by_pool": {str(k): v for k, v in self.nonlocal_kernel_by_pool.items()},
            "layers": [asdict(l) for l in self.layers],
        }

    def write(self, json_path: str, csv_path: str | None = None) -> None:
        with open(json_path, "w") as f:
            json.dump(self.to_json(), f, indent=1)
        if csv_path:
            with open(csv_path, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["name", "kind", "flops", "params"])
                for l in self.layers:
                    w.writerow([l.name, l.kind, l.flops, l.params])


def _conv(h: int, w: int, k: int, cin: int, cout: int) -> int:
    return h * w * k * k * cin * cout


def nonlocal_kernel_flops(h: int, w: int, channels: int, pool: int, stages: int) -> int:
    """N * M * C/2 for the affinity plus N * M * C per stage for the aggregation."""
    n = h * w
    m = (h // pool) * (w // pool)
    return n * m * (channels // 2) + stages * n * m * channels


def flop_estimate(cfg: NetworkConfig, input_shape: tuple[int, int] | tuple[int, int, int]) -> CostReport:
    """Per-sample cost of ``cfg`` on inputs of spatial size ``input_shape[:2]``."""
    h, w = input_shape[0], input_shape[1]
    cin = input_shape[2] if len(input_shape) > 2 else cfg.in_channels
    rep = CostReport(layer_count=cfg.layer_count())
    add = rep.layers.append
    c0 = cfg.input_conv_filters
    add(LayerCost("init.conv", "conv", _conv(h, w, 3, cin, c0), 9 * cin * c0 + c0))
    add(LayerCost("init.bn_relu", "elementwise", 2 * h * w * c0, 2 * c0))
    prev = c0
    for u, width in enumerate(cfg.channels):
        if u > 0 and cfg.pool_between_units:
            add(LayerCost(f"unit{u}.pool", "pool", h * w * prev))
            h, w = h // 2, w // 2
        if width != prev:
            add(LayerCost(f"unit{u}.expand", "conv", _conv(h, w, 1, prev, width), prev * width + width))
            add(LayerCost(f"unit{u}.expand_relu", "elementwise", h * w * width))
        half = width // 2
        for j in range(cfg.m):
            # K z, K^T (.) for each of the two half-steps
            add(LayerCost(f"unit{u}.block{j}.conv", "conv", 4 * _conv(h, w, 3, half, half), 2 * (9 * half * half + half)))
            add(LayerCost(f"unit{u}.block{j}.bn_relu", "elementwise", 2 * 2 * h * w * half, 2 * 2 * half))
            if cfg.has_nonlocal and j + 1 == cfg.nonlocal_position:
                _nonlocal_costs(rep, f"unit{u}.nonlocal", h, w, width, cfg.nl_pool[u], cfg.stages)
        prev = width
    if cfg.head == "classifier":
        p = cfg.final_pool
        add(LayerCost("head.pool", "pool", h * w * prev))
        feats = (h // p) * (w // p) * prev
        add(LayerCost("head.fc", "dense", feats * cfg.classes, feats * cfg.classes + cfg.classes))
    else:
        add(LayerCost("head.conv", "conv", _conv(h, w, 1, prev, cfg.classes), prev * cfg.classes + cfg.classes))
    return rep


def _nonlocal_costs(rep: CostReport, name: str, h: int, w: int, c: int, pool: int, stages: int) -> None:
    n = h * w
    m = (h // pool) * (w // pool)
    cp = c // 2
    add = rep.layers.append
    add(LayerCost(f"{name}.theta", "conv", n * c * cp, c * cp))
    if pool > 1:
        add(LayerCost(f"{name}.subsample", "pool", n * c))
    add(LayerCost(f"{name}.phi", "conv", m * c * cp, c * cp))
    kernel = nonlocal_kernel_flops(h, w, c, pool, stages)
    add(LayerCost(f"{name}.kernel", "nonlocal-kernel", kernel))
    rep.nonlocal_kernel_by_pool[pool] = rep.nonlocal_kernel_by_pool.get(pool, 0) + kernel
    mix_params = 2 * (c * c + 2 * c)
    add(LayerCost(f"{name}.mix", "conv", stages * n * c * c, mix_params))
    add(LayerCost(f"{name}.bn_relu", "elementwise", stages * 2 * n * c))
    if pool > 1 and stages > 1:
        add(LayerCost(f"{name}.subsample_basis", "pool", (stages - 1) * n * c))


def pool_sweep(cfg: NetworkConfig, input_shape, pools=(1, 2, 4, 6, 8, 12)) -> dict[int, CostReport]:
    """Cost reports with every unit's nonlocal pool size set to each value in ``pools``."""
    out = {}
    for p in pools:
        d = cfg.to_dict()
        d["nl_pool"] = [p] * cfg.units
        out[p] = flop_estimate(NetworkConfig.from_dict(d), input_shape)
    return out
