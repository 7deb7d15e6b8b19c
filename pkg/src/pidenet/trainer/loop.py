"""Mini-batch training loop with per-epoch metrics."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from ..hamiltonian import Network
from ..tensor import Tensor, backward
from .checkpoint import save_checkpoint
from .data import Dataset
from .objective import RegularizerConfig, loss, regularization
from .optim import MILESTONES, SGD, lr_schedule

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "lr", "train_loss", "train_acc", "test_acc")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 15
    batch: int = 100
    lr: float = 0.1
    warmup_lr: float = 0.01
    momentum: float = 0.9
    rescale_schedule: bool = True
    milestones: tuple[float, ...] = MILESTONES
    flip: bool = False
    seed: int = 0
    eval_batch: int = 250
    # training samples used to re-estimate BN statistics before each evaluation (0: keep the running averages)
    recalibrate_bn: int = 0
    reg: RegularizerConfig = field(default_factory=RegularizerConfig)

    def lr_at(self, epoch: int) -> float:
        total = self.epochs if self.rescale_schedule else None
        return lr_schedule(epoch, base=self.lr, warmup=self.warmup_lr, milestones=tuple(self.milestones), total_epochs=total)


def _batches(n: int, size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, size):
        yield order[start : start + size]


def evaluate(net: Network, x: np.ndarray, y: np.ndarray, batch: int = 250, reg: RegularizerConfig | None = None) -> tuple[float, float]:
    """(mean loss, accuracy) in eval mode; loss excludes regularization unless ``reg`` is given."""
    net.eval()
    total_loss, correct = 0.0, 0
    for idx in _batches(len(x), batch, None):
        logits = net(x[idx])
        total_loss += float(loss(logits, y[idx]).data) * len(idx)
        correct += _accuracy(logits.data, y[idx])
    mean_loss = total_loss / max(len(x), 1)
    if reg is not None:
        mean_loss += float(regularization(net.parameters(), reg).data)
    return mean_loss, correct / max(y.size, 1)


def recalibrate_batchnorm(net: Network, x: np.ndarray, batch: int, count: int) -> None:
    """Replace every BN running mean / variance by the average batch statistics of the current weights.

    Uses the first ``count`` rows of ``x`` in batches of ``batch``. The
    exponential averages lag far behind fast-moving weights on short
    schedules; this re-estimate is what eval mode then uses.
    """
    states = list(net.batchnorm_states().values())
    saved = [s.momentum for s in states]
    net.train()
    try:
        for k, idx in enumerate(_batches(min(count, len(x)), batch, None), start=1):
            for s in states:
                s.momentum = 1.0 - 1.0 / k  # cumulative mean of the batch statistics
            net(x[idx])
    finally:
        for s, m in zip(states, saved):
            s.momentum = m


def _accuracy(logits: np.ndarray, y: np.ndarray) -> int:
    pred = logits.reshape(-1, logits.shape[-1]).argmax(-1)
    return int((pred == y.reshape(-1)).sum())


def train_epoch(net: Network, data: Dataset, cfg: TrainConfig, opt: SGD, lr: float, rng: np.random.Generator, epoch: int) -> tuple[float, float]:
    net.train()
    params = net.parameters()
    seen, labelled, loss_sum, correct = 0, 0, 0.0, 0
    for step, idx in enumerate(_batches(len(data.x_train), cfg.batch, rng)):
        xb, yb = data.x_train[idx], data.y_train[idx]
        if cfg.flip:
            flips = rng.random(len(idx)) < 0.5
            xb = xb.copy()
            xb[flips] = xb[flips, :, ::-1]
            if yb.ndim > 1:
                yb = yb.copy()
                yb[flips] = yb[flips, :, ::-1]
        logits = net(xb)
        value = loss(logits, yb, params, cfg.reg)
        lv = float(value.data)
        if not np.isfinite(lv):
            raise TrainingDiverged(f"loss became {lv} at epoch {epoch}, step {step} (lr={lr})")
        grads = backward(value, params.values())
        opt.step(params, {n: grads[t] for n, t in params.items()}, lr)
        loss_sum += lv * len(idx)
        correct += _accuracy(logits.data, yb)
        seen += len(idx)
        labelled += yb.size
    return loss_sum / seen, correct / labelled


def train(
    net: Network,
    data: Dataset,
    cfg: TrainConfig,
    out_dir: str | None = None,
    on_epoch: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Train ``net`` in place and return the metric history.

    Row 0 holds the metrics of the untrained network (eval mode); row e
    the metrics after epoch e. With ``out_dir`` the history is written as
    metrics.csv plus metrics.json and the final state as checkpoint.pidn.
    """
    net.materialize(data.input_hw)
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(momentum=cfg.momentum)
    tr_loss, tr_acc = evaluate(net, data.x_train, data.y_train, cfg.eval_batch, cfg.reg)
    _, te_acc = evaluate(net, data.x_test, data.y_test, cfg.eval_batch)
    history = [dict(epoch=0, lr=cfg.lr_at(0), train_loss=tr_loss, train_acc=tr_acc, test_acc=te_acc)]
    if on_epoch:
        on_epoch(history[-1])
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.lr_at(epoch - 1)
        t0 = time.perf_counter()
        tr_loss, tr_acc = train_epoch(net, data, cfg, opt, lr, rng, epoch)
        if cfg.recalibrate_bn:
            recalibrate_batchnorm(net, data.x_train, cfg.batch, cfg.recalibrate_bn)
        _, te_acc = evaluate(net, data.x_test, data.y_test, cfg.eval_batch)
        row = dict(epoch=epoch, lr=lr, train_loss=tr_loss, train_acc=tr_acc, test_acc=te_acc)
        history.append(row)
        log.info("epoch %d lr %.4g loss %.4f train %.3f test %.3f (%.1fs)", epoch, lr, tr_loss, tr_acc, te_acc, time.perf_counter() - t0)
        if on_epoch:
            on_epoch(row)
    if out_dir is not None:
        write_metrics(out_dir, history)
        save_checkpoint(
            os.path.join(out_dir, "checkpoint.pidn"),
            net,
            step=cfg.epochs * -(-len(data.x_train) // cfg.batch),
            optimizer=opt,
            meta={"train": {k: v for k, v in asdict(cfg).items() if k != "reg"}, "reg": asdict(cfg.reg)},
        )
    return history


def write_metrics(out_dir: str, history: list[dict]) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=METRIC_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(float(row[k])) if k != "epoch" else row[k]) for k in METRIC_FIELDS})
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        json.dump(history, f, indent=1)
