"""Command line entry point: train, eval, analyze, pide-lab and profile.

Every run is described by ``key = value`` settings. They come from the
defaults below, then an optional ``--config`` file (``#`` starts a comment),
then explicit flags. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .hamiltonian import NetworkConfig, build_network
from .trainer import (
    CheckpointError,
    RegularizerConfig,
    SyntheticLongRangeSpec,
    TrainConfig,
    evaluate,
    load_checkpoint,
    load_cifar10,
    longrange_dataset,
    restore_network,
    train,
)

log = logging.getLogger("pidenet")

NONLOCAL_CHOICES = ("none", "diffusion", "fraclap", "invfraclap", "log")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = "synthetic"
    data_dir: str = ""
    out: str = "runs/latest"
    seed: int = 0
    # network
    nonlocal_family: str = "diffusion"
    m: int = 2
    channels: str = "8,16,16"
    input_conv_filters: int = 8
    stages: int = 2
    pool: str = "2"
    h: float = 0.05
    lam: float = 0.1
    s: float = 0.5
    head: str = "classifier"
    dtype: str = "float32"
    # training
    epochs: int = 6
    batch: int = 50
    lr: float = 0.1
    warmup_lr: float = 0.01
    momentum: float = 0.9
    rescale_schedule: bool = False
    milestones: str = "80,120,160,180"
    recalibrate_bn: int = 1000
    flip: bool = False
    alpha1: float = 2e-4
    alpha2: float = 1e-8
    # synthetic task
    train_count: int = 5000
    test_count: int = 1000
    shapes: int = 2
    min_separation: float = 20.0
    noise: float = 0.1

    # config-file / flag spelling -> field
    ALIASES = {"nonlocal": "nonlocal_family", "lambda": "lam", "data-dir": "data_dir"}

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def set(self, key: str, raw) -> None:
        key = self.ALIASES.get(key, key).replace("-", "_")
        if key not in self.keys():
            raise ConfigError(f"unknown config key {key!r}")
        ftype = {f.name: f.type for f in fields(self)}[key]
        try:
            if ftype in ("bool", bool):
                value = raw if isinstance(raw, bool) else str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif ftype in ("int", int):
                value = int(raw)
            elif ftype in ("float", float):
                value = float(raw)
            else:
                value = str(raw).strip()
        except ValueError as exc:
            raise ConfigError(f"bad value {raw!r} for {key}: {exc}") from None
        setattr(self, key, value)

    def validate(self) -> None:
        if self.dataset not in ("synthetic", "cifar10"):
            raise ConfigError(f"dataset must be synthetic or cifar10, got {self.dataset!r}")
        if self.nonlocal_family not in NONLOCAL_CHOICES:
            raise ConfigError(f"nonlocal must be one of {NONLOCAL_CHOICES}")
        if self.dataset == "cifar10" and not self.data_dir:
            raise ConfigError("data_dir is required for dataset cifar10 (set data_dir or --data-dir)")
        if self.epochs < 0 or self.batch < 1:
            raise ConfigError("epochs must be >= 0 and batch >= 1")

    def echo(self) -> str:
        lines = ["# effective configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def int_list(self, raw: str) -> tuple[int, ...]:
        return tuple(int(v) for v in str(raw).replace(" ", "").split(",") if v)

    def network_config(self, in_channels: int, classes: int) -> NetworkConfig:
        channels = self.int_list(self.channels)
        pools = self.int_list(self.pool)
        if len(pools) == 1:
            pools = pools * len(channels)
        return NetworkConfig(
            units=len(channels),
            m=self.m,
            channels=channels,
            in_channels=in_channels,
            input_conv_filters=self.input_conv_filters,
            nonlocal_family=self.nonlocal_family,
            stages=self.stages,
            nl_pool=pools,
            lam=self.lam,
            s=None if self.nonlocal_family == "log" else self.s,
            head=self.head,
            classes=classes,
            h=self.h,
            dtype=self.dtype,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch=self.batch,
            lr=self.lr,
            warmup_lr=self.warmup_lr,
            momentum=self.momentum,
            rescale_schedule=self.rescale_schedule,
            milestones=self.int_list(self.milestones),
            recalibrate_bn=self.recalibrate_bn,
            flip=self.flip,
            seed=self.seed,
            reg=RegularizerConfig(alpha1=self.alpha1, alpha2=self.alpha2, h=self.h),
        )


def parse_config_text(text: str, cfg: RunConfig | None = None) -> RunConfig:
    cfg = cfg or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            cfg.set(key, value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return cfg


def load_config_file(path: str, cfg: RunConfig | None = None) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file {path!r} not found")
    with open(path) as f:
        return parse_config_text(f.read(), cfg)


# ---------------------------------------------------------------------------
# datasets


def load_dataset(cfg: RunConfig):
    if cfg.dataset == "synthetic":
        spec = SyntheticLongRangeSpec(shapes=cfg.shapes, min_separation=cfg.min_separation, noise_sigma=cfg.noise)
        data = longrange_dataset(spec, seed=cfg.seed, train=cfg.train_count, test=cfg.test_count)
    else:
        data = load_cifar10(cfg.data_dir)
    dt = np.dtype(cfg.dtype)
    data.x_train = data.x_train.astype(dt, copy=False)
    data.x_test = data.x_test.astype(dt, copy=False)
    return data


# ---------------------------------------------------------------------------
# commands

RUN_FLAGS = {
    "--dataset": dict(choices=("synthetic", "cifar10")),
    "--data-dir": dict(dest="data_dir"),
    "--nonlocal": dict(dest="nonlocal_family", choices=NONLOCAL_CHOICES),
    "--stages": dict(type=int),
    "--pool": dict(),
    "--h": dict(type=float),
    "--lambda": dict(dest="lam", type=float),
    "--s": dict(type=float),
    "--m": dict(type=int),
    "--epochs": dict(type=int),
    "--batch": dict(type=int),
    "--seed": dict(type=int),
    "--out": dict(),
}


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file")
    for flag, kw in RUN_FLAGS.items():
        p.add_argument(flag, default=None, **kw)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def resolve_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        load_config_file(args.config, cfg)
    for flag, kw in RUN_FLAGS.items():
        dest = kw.get("dest", flag.lstrip("-").replace("-", "_"))
        value = getattr(args, dest, None)
        if value is not None:
            cfg.set(dest, value)
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data = load_dataset(cfg)
    net_cfg = cfg.network_config(data.channels, data.classes)
    net = build_network(net_cfg, seed=cfg.seed, input_hw=data.input_hw)
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.echo"), "w") as f:
        f.write(cfg.echo())
    print(f"training {net_cfg.layer_count()}-layer network ({net.parameter_count()} parameters) on {data.name}")
    history = train(
        net,
        data,
        cfg.train_config(),
        out_dir=cfg.out,
        on_epoch=lambda r: print(
            f"epoch {r['epoch']:3d}  lr {r['lr']:.4g}  loss {r['train_loss']:.4f}  train {r['train_acc']:.4f}  test {r['test_acc']:.4f}",
            flush=True,
        ),
    )
    print(f"final test accuracy {history[-1]['test_acc']:.4f}; wrote {cfg.out}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    net = restore_network(ckpt)
    cfg = resolve_config(args)
    data = load_dataset(cfg)
    x, y = (data.x_train, data.y_train) if args.split == "train" else (data.x_test, data.y_test)
    x = x.astype(np.dtype(net.cfg.dtype), copy=False)
    _, acc = evaluate(net, x, y)
    print(f"accuracy {acc:.4f} on {data.name} {args.split} ({len(y)} samples)")
    return 0


def cmd_analyze(args) -> int:
    from .diagnostics.spectral import spectral_reports, write_reports

    ckpt = load_checkpoint(args.checkpoint)
    reports = spectral_reports(ckpt.tensors)
    note = None if reports else "checkpoint has no nonlocal blocks; nothing to analyze"
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    paths = write_reports(out, reports, note)
    if note:
        print(note)
    for r in reports:
        print(f"{r.name}: {len(r.eigenvalues)} eigenvalues, positive real part {r.fraction_positive:.3f}, symmetric part positive {r.symmetric_fraction_positive:.3f}")
    print(f"wrote {paths['json']}")
    return 0


def cmd_profile(args) -> int:
    from .diagnostics.cost import flop_estimate, pool_sweep

    cfg = resolve_config(args)
    in_ch, classes = (1, 2) if cfg.dataset == "synthetic" else (3, 10)
    if args.input:
        hw = RunConfig().int_list(args.input)
        if len(hw) == 3:
            in_ch = hw[2]
    else:
        hw = (32, 32)
    net_cfg = cfg.network_config(in_ch, classes)
    rep = flop_estimate(net_cfg, (hw[0], hw[1], in_ch))
    os.makedirs(cfg.out, exist_ok=True)
    rep.write(os.path.join(cfg.out, "cost.json"), os.path.join(cfg.out, "cost.csv"))
    print(f"layers {rep.layer_count}")
    print(f"total FLOPs {rep.total_flops / 1e6:.1f}M  parameters {rep.total_params / 1e6:.3f}M")
    if net_cfg.has_nonlocal:
        sweep = pool_sweep(net_cfg, (hw[0], hw[1], in_ch))
        with open(os.path.join(cfg.out, "pool_sweep.csv"), "w") as f:
            f.write("pool,total_flops,kernel_flops\n")
            for p, r in sweep.items():
                f.write(f"{p},{r.total_flops},{r.kernel_flops}\n")
                print(f"  pool {p:2d}: {r.total_flops / 1e6:.1f}M FLOPs (kernel {r.kernel_flops / 1e6:.1f}M)")
    return 0


def cmd_pide_lab(args) -> int:
    from . import pide_lab as lab

    os.makedirs(args.out, exist_ok=True)
    if args.experiment == "diffusion":
        rng = np.random.default_rng(args.seed)
        omega = lab.random_symmetric_kernel(args.points, rng)
        dt = args.dt if args.dt is not None else 0.2 * lab.step_bound(omega)
        # zero-mean start: the norm then decays toward 0 rather than to a rounding floor
        u0 = rng.standard_normal(args.points)
        traj = lab.simulate_diffusion(u0 - u0.mean(), omega, dt, args.steps)
        path = os.path.join(args.out, "diffusion.csv")
        lab.write_diffusion_csv(path, traj)
        print(f"dt {dt:.4g} (bound {traj.bound:.4g}); L2 {traj.l2[0]:.4f} -> {traj.l2[-1]:.4f}; decay holds: {traj.decay_holds()}")
    else:
        rows = []
        for s in args.s:
            for xi in args.xi:
                m = lab.measure_symbol(args.points, s, xi)
                rows.append(m)
                print(f"s {s:.2f} xi {xi}: measured {m.measured:.4f}  exact {m.exact:.4f}  rel err {m.relative_error:.3%}")
        path = os.path.join(args.out, "symbol.csv")
        lab.write_symbol_csv(path, rows)
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pidenet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a network and write metrics and a checkpoint")
    _add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a dataset split")
    p.add_argument("checkpoint")
    p.add_argument("--split", choices=("train", "test"), default="test")
    _add_run_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="spectra of the nonlocal mixing weights in a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("profile", help="FLOP and parameter counts for a configuration")
    _add_run_flags(p)
    p.add_argument("--input", help="H,W[,C] of the input (default 32,32)")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("pide-lab", help="continuous-side validators")
    p.add_argument("experiment", choices=("diffusion", "symbol"))
    p.add_argument("--points", type=int, default=None)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--dt", type=float)
    p.add_argument("--s", type=float, nargs="+", default=[0.25, 0.5, 0.75])
    p.add_argument("--xi", type=int, nargs="+", default=[1, 2])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/pide-lab")
    p.set_defaults(func=cmd_pide_lab)
    return parser


@contextlib.contextmanager
def thread_cap():
    """Honour PIDENET_THREADS by capping the BLAS / OpenMP pools."""
    raw = os.environ.get("PIDENET_THREADS")
    if not raw:
        yield
        return
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"PIDENET_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("PIDENET_THREADS must be >= 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "command", None) == "pide-lab" and args.points is None:
        args.points = 16 if args.experiment == "diffusion" else 512
    try:
        with thread_cap():
            return args.func(args)
    except (ConfigError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
