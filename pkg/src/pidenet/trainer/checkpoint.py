"""Binary checkpoints.

Layout (little-endian):

    b"PIDN"  u32 version
    u32 n    n bytes of UTF-8 JSON (network config and run metadata)
    u64      training step
    tensor table: u32 count, then per tensor
             u16 name length, name, u8 ndim, ndim x u32 extents, float32 values
    optimizer: u32 n, n bytes of JSON, then a tensor table of velocities
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Mapping

import numpy as np

from ..hamiltonian import Network, NetworkConfig, build_network
from ..tensor import Tensor
from .optim import SGD

MAGIC = b"PIDN"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    step: int
    tensors: dict[str, np.ndarray]
    optimizer: dict = field(default_factory=dict)
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def _write_table(f: BinaryIO, tensors: Mapping[str, np.ndarray]) -> None:
    f.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        f.write(struct.pack("<H", len(raw)))
        f.write(raw)
        f.write(struct.pack("<B", arr.ndim))
        f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CheckpointError("checkpoint truncated")
    return buf


def _read_table(f: BinaryIO) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", _read_exact(f, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(f, 2))
        name = _read_exact(f, nlen).decode("utf-8")
        (ndim,) = struct.unpack("<B", _read_exact(f, 1))
        shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim)) if ndim else ()
        n = int(np.prod(shape)) if shape else 1
        out[name] = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").reshape(shape).astype(np.float32)
    return out


def _read_json(f: BinaryIO) -> dict:
    (n,) = struct.unpack("<I", _read_exact(f, 4))
    return json.loads(_read_exact(f, n).decode("utf-8"))


def _write_json(f: BinaryIO, obj: dict) -> None:
    raw = json.dumps(obj, sort_keys=True).encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)


def network_tensors(net: Network) -> dict[str, np.ndarray]:
    """Parameters plus batch-norm running statistics, keyed by stable names."""
    out = {name: t.data for name, t in net.parameters().items()}
    for name, bn in net.batchnorm_states().items():
        out[f"{name}.running_mean"] = bn.running_mean
        out[f"{name}.running_var"] = bn.running_var
    return out


def write_checkpoint(path, ckpt: Checkpoint) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        _write_json(f, ckpt.config)
        f.write(struct.pack("<Q", int(ckpt.step)))
        _write_table(f, ckpt.tensors)
        _write_json(f, ckpt.optimizer)
        _write_table(f, ckpt.velocity)


def save_checkpoint(path, net: Network, step: int = 0, optimizer: SGD | None = None, meta: dict | None = None) -> Checkpoint:
    config = {"network": net.cfg.to_dict(), "seed": net.seed}
    if meta:
        config["meta"] = meta
    opt_json = {"momentum": optimizer.momentum} if optimizer is not None else {}
    velocity = dict(optimizer.velocity) if optimizer is not None else {}
    ckpt = Checkpoint(config, step, network_tensors(net), opt_json, velocity)
    write_checkpoint(path, ckpt)
    return ckpt


def load_checkpoint(path) -> Checkpoint:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint {path!r} not found")
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        config = _read_json(f)
        (step,) = struct.unpack("<Q", _read_exact(f, 8))
        tensors = _read_table(f)
        optimizer = _read_json(f)
        velocity = _read_table(f)
    return Checkpoint(config, step, tensors, optimizer, velocity)


def restore_network(ckpt: Checkpoint) -> Network:
    """Rebuild the network described by ``ckpt`` and copy its tensors in."""
    cfg = NetworkConfig.from_dict(ckpt.config["network"])
    net = build_network(cfg, seed=ckpt.config.get("seed", 0))
    dt = np.dtype(cfg.dtype)
    if "head.w" in ckpt.tensors and net.head_w is None:
        net.head_w = Tensor(np.zeros(ckpt.tensors["head.w"].shape, dtype=dt), requires_grad=True)
    params = net.parameters()
    states = net.batchnorm_states()
    for name, arr in ckpt.tensors.items():
        if name in params:
            if params[name].shape != arr.shape:
                raise CheckpointError(f"{name}: shape {arr.shape} does not fit {params[name].shape}")
            params[name].data[...] = arr
            continue
        base, _, stat = name.rpartition(".")
        if base in states and stat in ("running_mean", "running_var"):
            setattr(states[base], stat, arr.astype(dt))
            continue
        raise CheckpointError(f"unknown tensor {name!r} in checkpoint")
    return net


def restore_optimizer(ckpt: Checkpoint) -> SGD:
    opt = SGD(momentum=ckpt.optimizer.get("momentum", 0.9))
    opt.velocity = {k: v.astype(np.float64) for k, v in ckpt.velocity.items()}
    return opt
