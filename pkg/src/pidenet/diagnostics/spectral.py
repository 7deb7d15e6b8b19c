"""Spectra of nonlocal mixing weights and of their symmetric parts."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .eigen import eigen

IMAG_TOLERANCE = 1e-10


def symmetric_split(k) -> tuple[np.ndarray, np.ndarray]:
    """(K + K^T) / 2 and (K - K^T) / 2."""
    k = np.asarray(k, dtype=float)
    if k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ValueError(f"symmetric split needs a square matrix, got {k.shape}")
    ks = (k + k.T) / 2
    return ks, k - ks


def quadratic_form_check(k, samples: int = 100, rng: np.random.Generator | None = None) -> float:
    """max |x^T K x - x^T K_s x| over random unit vectors x."""
    k = np.asarray(k, dtype=float)
    ks, _ = symmetric_split(k)
    rng = rng or np.random.default_rng(0)
    x = rng.standard_normal((samples, k.shape[0]))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    full = np.einsum("si,ij,sj->s", x, k, x)
    sym = np.einsum("si,ij,sj->s", x, ks, x)
    return float(np.max(np.abs(full - sym)))


@dataclass
class SpectralReport:
    name: str
    eigenvalues: list[complex]
    fraction_positive: float
    symmetric_eigenvalues: list[float]
    symmetric_fraction_positive: float
    symmetric_max_imag: float

    def to_json(self) -> dict:
        d = asdict(self)
        d["eigenvalues"] = [[float(z.real), float(z.imag)] for z in self.eigenvalues]
        return d


def analyze_matrix(name: str, k) -> SpectralReport:
    """Orient a 1x1 convolution as the matrix acting on column vectors of channels."""
    k = np.asarray(k, dtype=float)
    if k.ndim == 4:
        k = k.reshape(k.shape[2], k.shape[3])
    # weights are stored (Cin, Cout) for x @ W; the operator on column vectors is W^T
    op = k.T
    ev = eigen(op)
    ks, _ = symmetric_split(op)
    sev = eigen(ks)
    max_imag = float(np.abs(sev.imag).max()) if sev.size else 0.0
    if max_imag > IMAG_TOLERANCE * max(1.0, float(np.abs(sev).max())):
        raise ArithmeticError(f"{name}: symmetric part has eigenvalues with imaginary part {max_imag:g}")
    real = np.sort(sev.real)
    return SpectralReport(
        name=name,
        eigenvalues=list(ev),
        fraction_positive=float(np.mean(ev.real > 0)),
        symmetric_eigenvalues=[float(v) for v in real],
        symmetric_fraction_positive=float(np.mean(real > 0)),
        symmetric_max_imag=max_imag,
    )


def nonlocal_mixing_weights(tensors: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    """The K1 / K2 mixing matrices of every nonlocal block, keyed by name."""
    return {n: np.asarray(t) for n, t in tensors.items() if ".nonlocal." in n and n.rsplit(".", 1)[-1] in ("k1", "k2")}


def spectral_reports(tensors: Mapping[str, np.ndarray]) -> list[SpectralReport]:
    return [analyze_matrix(name, w) for name, w in sorted(nonlocal_mixing_weights(tensors).items())]


def write_reports(out_dir: str, reports: list[SpectralReport], note: str | None = None) -> dict[str, str]:
    """spectral.json (everything) plus one ``re,im`` CSV per matrix; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    doc = {"matrices": [r.to_json() for r in reports]}
    if note:
        doc["note"] = note
    path = os.path.join(out_dir, "spectral.json")
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
    paths["json"] = path
    for r in reports:
        for tag, values in (("raw", r.eigenvalues), ("sym", [complex(v) for v in r.symmetric_eigenvalues])):
            p = os.path.join(out_dir, f"eig_{r.name}_{tag}.csv")
            with open(p, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow(["re", "im"])
                for z in values:
                    w.writerow([repr(float(z.real)), repr(float(z.imag))])
            paths[f"{r.name}.{tag}"] = p
    return paths
