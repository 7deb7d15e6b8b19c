"""Desk-scale field-of-view experiment: nonlocal blocks vs the plain Hamiltonian baseline.

The synthetic task labels an image by whether its two markers, placed at
least 20 pixels apart, have the same shape. A stack of 3x3 convolutions
in an m=2 network cannot see both markers from one position, so the
baseline stays near chance while a nonlocal block can compare them.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .hamiltonian import NetworkConfig, build_network
from .trainer import RegularizerConfig, SyntheticLongRangeSpec, TrainConfig, longrange_dataset, train


@dataclass
class FieldOfViewConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 4
    batch: int = 50
    train_count: int = 5000
    test_count: int = 1000
    shapes: int = 2
    m: int = 2
    channels: tuple[int, ...] = (8, 16, 16)
    input_conv_filters: int = 8
    pool: int = 2
    h: float = 0.2
    lam: float = 0.1
    lr: float = 0.1
    warmup_lr: float = 0.01
    recalibrate_bn: int = 1000
    dtype: str = "float32"

    def network(self, family: str, stages: int = 2) -> NetworkConfig:
        return NetworkConfig(
            units=len(self.channels),
            m=self.m,
            channels=tuple(self.channels),
            in_channels=1,
            input_conv_filters=self.input_conv_filters,
            nonlocal_family=family,
            stages=stages,
            nl_pool=(self.pool,) * len(self.channels),
            lam=self.lam,
            classes=2,
            h=self.h,
            dtype=self.dtype,
        )

    def training(self, seed: int) -> TrainConfig:
        # no milestone is reached in a short run; lr stays at ``lr`` after the warm-up epoch
        return TrainConfig(
            epochs=self.epochs,
            batch=self.batch,
            lr=self.lr,
            warmup_lr=self.warmup_lr,
            rescale_schedule=False,
            seed=seed,
            recalibrate_bn=self.recalibrate_bn,
            reg=RegularizerConfig(h=self.h),
        )


@dataclass
class RunResult:
    family: str
    stages: int
    seed: int
    history: list[dict]
    seconds: float

    @property
    def final_test_acc(self) -> float:
        return self.history[-1]["test_acc"]


@dataclass
class Comparison:
    label: str
    runs: list[RunResult] = field(default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [r.final_test_acc for r in self.runs]

    @property
    def median(self) -> float:
        return statistics.median(self.accuracies)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "median_test_acc": self.median,
            "runs": [{k: v for k, v in asdict(r).items()} for r in self.runs],
        }


def dataset(cfg: FieldOfViewConfig, seed: int):
    spec = SyntheticLongRangeSpec(shapes=cfg.shapes)
    data = longrange_dataset(spec, seed=seed, train=cfg.train_count, test=cfg.test_count)
    dt = np.dtype(cfg.dtype)
    data.x_train = data.x_train.astype(dt)
    data.x_test = data.x_test.astype(dt)
    return data


def run_one(cfg: FieldOfViewConfig, family: str, seed: int, stages: int = 2, on_epoch=None, out_dir=None) -> RunResult:
    data = dataset(cfg, seed)
    net = build_network(cfg.network(family, stages), seed=seed, input_hw=data.input_hw)
    t0 = time.perf_counter()
    history = train(net, data, cfg.training(seed), out_dir=out_dir, on_epoch=on_epoch)
    return RunResult(family, stages, seed, history, time.perf_counter() - t0)


def run_comparison(cfg: FieldOfViewConfig, family: str, stages: int = 2, on_run=None) -> Comparison:
    label = family if family == "none" else f"{family}/stages={stages}"
    cmp = Comparison(label)
    for seed in cfg.seeds:
        result = run_one(cfg, family, seed, stages)
        cmp.runs.append(result)
        if on_run:
            on_run(result)
    return cmp
