"""Multi-stage nonlocal blocks with identity skip connections.

Each stage k computes

    B_k = X + h * Kmix_k[ (c / norm) * sum_j w_ij * term_j ]

with B_0 = X and term_j one of (B_j - B_i), (B_i - B_j) or B_j, depending on
the kernel family. The affinity w is built once from X. The fast path uses
the rearrangement sum_j w_ij (b_j - b_i) = (w @ b)_i - rowsum_i * b_i.
Stage k uses mixing map ``k % 2`` (K1, K2, K1, K2, ...).

For the dot-product family the affinity is rank C/2, so the block can
apply it as lam * theta (phi^T b) without ever forming the N x M matrix
(``factorize=True``); the result is the same up to rounding.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field

import numpy as np

from .functional import BatchNormState, batchnorm, conv1x1
from .kernels import (
    AffinityMatrix,
    KernelSpec,
    affinity,
    direct_distances,
    embed,
    embedding_width,
    kernel_entry,
    strips,
    subsample_strips,
)
from .tensor import ShapeError, Tensor, as_tensor, check_finite, matmul, relu, transpose

NORMALIZATIONS = ("count", "pixels", "row")


@dataclass
class FactoredAffinity:
    """Dot-product affinity lam * theta phi^T kept as its two factors."""

    theta: Tensor
    phi: Tensor
    lam: float
    normalizer: float

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.theta.shape[0], self.theta.shape[1], self.phi.shape[1])

    def apply(self, sub) -> Tensor:
        return matmul(self.theta, matmul(transpose(self.phi, (0, 2, 1)), sub)) * self.lam

    def row_sums(self) -> Tensor:
        col = transpose(self.phi.sum(axis=1, keepdims=True), (0, 2, 1))
        return matmul(self.theta, col) * self.lam

    def materialize(self) -> AffinityMatrix:
        vals = matmul(self.theta, transpose(self.phi, (0, 2, 1))) * self.lam
        return AffinityMatrix(values=vals, normalizer=self.normalizer)


def _apply(omega, sub) -> Tensor:
    if isinstance(omega, FactoredAffinity):
        return omega.apply(sub)
    return matmul(omega.values, sub)


def _fan_in_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class NonlocalBlock:
    """Parameters and forward pass of one nonlocal block.

    ``factorize`` lets the dot-product family skip materializing the
    affinity matrix. ``normalization`` selects the divisor of the aggregate: "count" uses the
    number of summed strips M, "pixels" uses N = H*W of the input and "row"
    uses the true row sums of the affinity matrix.
    """

    channels: int
    spec: KernelSpec = field(default_factory=KernelSpec)
    h: float = 0.05
    stages: int = 2
    pool: int = 1
    plain_mode: bool = False
    normalization: str = "count"
    factorize: bool = False
    dtype: type = np.float64
    rng: InitVar[np.random.Generator | None] = None

    def __post_init__(self, rng):
        if self.h < 0:
            raise ValueError("step size h must be nonnegative")
        if self.stages < 1:
            raise ValueError("stages must be >= 1")
        if self.pool < 1:
            raise ValueError("pool must be >= 1")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        c = self.channels
        cp = embedding_width(c)
        self.theta_w = Tensor(_fan_in_normal(rng, (c, cp), c, self.dtype), requires_grad=True)
        self.phi_w = Tensor(_fan_in_normal(rng, (c, cp), c, self.dtype), requires_grad=True)
        self.k_w = [Tensor(_fan_in_normal(rng, (c, c), c, self.dtype), requires_grad=True) for _ in range(2)]
        self.bn = [BatchNormState(c, dtype=self.dtype) for _ in range(2)]

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {
            f"{prefix}theta": self.theta_w,
            f"{prefix}phi": self.phi_w,
            f"{prefix}k1": self.k_w[0],
            f"{prefix}k2": self.k_w[1],
        }
        if not self.plain_mode:
            for k, bn in enumerate(self.bn, start=1):
                out[f"{prefix}bn{k}.scale"] = bn.scale
                out[f"{prefix}bn{k}.shift"] = bn.shift
        return out

    def set_mode(self, mode: str) -> None:
        for bn in self.bn:
            bn.mode = mode

    # ------------------------------------------------------------------

    def embeddings(self, x) -> tuple[Tensor, Tensor]:
        """theta on every strip of x, phi on the strips of the max-pooled x."""
        x = as_tensor(x)
        return embed(strips(x), self.theta_w), embed(subsample_strips(x, self.pool), self.phi_w)

    def affinity(self, x) -> AffinityMatrix:
        x = as_tensor(x)
        theta, phi = self.embeddings(x)
        omega = affinity(theta, phi, self.spec)
        if self.normalization == "pixels":
            omega.normalizer = float(x.shape[1] * x.shape[2])
        return omega

    def kernel(self, x) -> AffinityMatrix | FactoredAffinity:
        """The affinity in whichever form the forward pass uses."""
        if not (self.factorize and self.spec.family == "dot"):
            return self.affinity(x)
        x = as_tensor(x)
        theta, phi = self.embeddings(x)
        norm = float(x.shape[1] * x.shape[2]) if self.normalization == "pixels" else float(phi.shape[1])
        return FactoredAffinity(theta, phi, self.spec.lam, norm)

    def aggregate(self, basis, omega: AffinityMatrix | FactoredAffinity) -> Tensor:
        """(c / norm) * sum_j w_ij term_j for every strip, as (B, H, W, C)."""
        basis = as_tensor(basis)
        b, hh, ww, c = basis.shape
        shape = omega.shape
        if shape[1] != hh * ww:
            raise ShapeError(f"affinity has {shape[1]} rows for {hh * ww} strips")
        sub = subsample_strips(basis, self.pool)
        if shape[2] != sub.shape[1]:
            raise ShapeError(f"affinity has {shape[2]} columns for {sub.shape[1]} subsampled strips")
        acc = _apply(omega, sub)
        sign = self.spec.difference
        if sign:
            rows = omega.row_sums()
            weighted_self = rows * strips(basis)
            acc = acc - weighted_self if sign > 0 else weighted_self - acc
        if self.normalization == "row":
            acc = acc * self.spec.constant / omega.row_sums()
        else:
            acc = acc * (self.spec.constant / omega.normalizer)
        check_finite(acc, "nonlocal aggregate")
        return acc.reshape(b, hh, ww, c)

    def mix(self, agg, which: int) -> Tensor:
        out = conv1x1(agg, self.k_w[which])
        if self.plain_mode:
            return out
        return relu(batchnorm(out, self.bn[which]))

    def stage(self, x, basis, omega: AffinityMatrix, which: int) -> Tensor:
        x = as_tensor(x)
        return x + self.mix(self.aggregate(basis, omega), which) * self.h

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        omega = self.kernel(x)
        basis = x
        for k in range(self.stages):
            basis = self.stage(x, basis, omega, k % 2)
        return basis

    forward = __call__

    # ------------------------------------------------------------------
    # reference routes (plain numpy, no autodiff)

    def _mix_numpy(self, agg: np.ndarray, which: int) -> np.ndarray:
        out = np.einsum("...c,cd->...d", agg, self.k_w[which].data)
        if self.plain_mode:
            return out
        bn = self.bn[which]
        axes = tuple(range(out.ndim - 1))
        if bn.mode == "eval":
            mu, var = bn.running_mean, bn.running_var
        else:
            mu = out.mean(axis=axes)
            var = ((out - mu) ** 2).mean(axis=axes)
        out = bn.scale.data * (out - mu) / np.sqrt(var + bn.epsilon) + bn.shift.data
        return np.maximum(out, 0.0)

    def stage_naive(self, x: np.ndarray, basis: np.ndarray, which: int) -> np.ndarray:
        """Un-rearranged double loop over strip pairs; independent of the fast path."""
        x = np.asarray(x, dtype=float)
        basis = np.asarray(basis, dtype=float)
        bsz, hh, ww, c = x.shape
        p = self.pool
        ho, wo = hh // p, ww // p

        def pooled(img):
            out = np.empty((ho * wo, c))
            for a in range(ho):
                for bcol in range(wo):
                    patch = img[a * p : (a + 1) * p, bcol * p : (bcol + 1) * p, :]
                    out[a * wo + bcol] = patch.reshape(-1, c).max(axis=0)
            return out

        spec = self.spec
        result = np.empty((bsz, hh * ww, c))
        for bi in range(bsz):
            xs = x[bi].reshape(hh * ww, c)
            bs = basis[bi].reshape(hh * ww, c)
            xhat = pooled(x[bi])
            bhat = pooled(basis[bi])
            theta = xs @ self.theta_w.data
            phi = xhat @ self.phi_w.data
            n, m = theta.shape[0], phi.shape[0]
            for i in range(n):
                acc = np.zeros(c)
                rowsum = 0.0
                for j in range(m):
                    dist = float(np.sqrt(np.sum((theta[i] - phi[j]) ** 2)))
                    wij = kernel_entry(dist, float(theta[i] @ phi[j]), spec)
                    rowsum += wij
                    if spec.difference > 0:
                        term = bhat[j] - bs[i]
                    elif spec.difference < 0:
                        term = bs[i] - bhat[j]
                    else:
                        term = bhat[j]
                    acc += wij * term
                if self.normalization == "row":
                    denom = rowsum
                elif self.normalization == "pixels":
                    denom = float(n)
                else:
                    denom = float(m)
                result[bi, i] = spec.constant * acc / denom
        agg = result.reshape(bsz, hh, ww, c)
        return x + self.h * self._mix_numpy(agg, which)

    def forward_naive(self, x: np.ndarray) -> np.ndarray:
        basis = np.asarray(x, dtype=float)
        for k in range(self.stages):
            basis = self.stage_naive(x, basis, k % 2)
        return basis


def _embed_and_kernel(block: NonlocalBlock, feats: np.ndarray) -> np.ndarray:
    # raw kernel (B, N, N) on strips, computed entry by entry
    theta = feats @ block.theta_w.data
    phi = feats @ block.phi_w.data
    dist = direct_distances(theta, phi)
    dots = np.einsum("bic,bjc->bij", theta, phi)
    out = np.empty_like(dist)
    for idx in np.ndindex(*dist.shape):
        out[idx] = kernel_entry(dist[idx], dots[idx], block.spec)
    return out


def omega_operator(block: NonlocalBlock, feats: np.ndarray) -> np.ndarray:
    """Row-normalized affinity operator (B, N, N), scaled by the family constant."""
    w = _embed_and_kernel(block, feats)
    return block.spec.constant * w / w.sum(axis=2, keepdims=True)


def diff_operator(feats: np.ndarray) -> np.ndarray:
    """[Diff(X)]_{jk} = X_k - X_j as a (B, N, N, C) tensor."""
    return feats[:, None, :, :] - feats[:, :, None, :]


def diag12(y: np.ndarray) -> np.ndarray:
    """Diagonal over the two strip axes: (B, N, N, C) -> (B, N, C)."""
    n = y.shape[1]
    return y[:, np.arange(n), np.arange(n), :]


def matrix_form_step(v, w, block: NonlocalBlock) -> tuple[np.ndarray, np.ndarray]:
    """One Verlet step of the paired (V, W) system behind the two-stage block.

    Started from V = X and W = -X with row-normalized affinities, V_new is
    the first stage output and -W_new the second. Works on (B, H, W, C) or
    (B, N, C) arrays and returns arrays of the same shape. Only the
    un-subsampled block has this form.
    """
    if block.pool != 1:
        raise ValueError("the matrix form is defined for un-subsampled blocks (pool=1)")
    v = np.asarray(v.data if isinstance(v, Tensor) else v, dtype=float)
    w = np.asarray(w.data if isinstance(w, Tensor) else w, dtype=float)
    if v.shape != w.shape:
        raise ShapeError(f"V and W shapes differ: {v.shape} vs {w.shape}")
    shape = v.shape
    vs = v.reshape(shape[0], -1, shape[-1])
    ws = w.reshape(shape[0], -1, shape[-1])
    om1 = omega_operator(block, vs)
    om2 = omega_operator(block, -ws)
    sign = block.spec.difference

    def contract(op, feats):
        if sign == 0:
            return op @ feats
        full = np.einsum("bjm,bmkc->bjkc", op, diff_operator(feats))
        return diag12(full)

    if sign == 0:
        upd_v = -contract(om1, ws)
    else:
        upd_v = sign * contract(om1, ws)
    v_new = vs + block.h * block._mix_numpy(upd_v.reshape(shape), 0).reshape(vs.shape)
    if sign == 0:
        upd_w = contract(om2, v_new)
    else:
        upd_w = -sign * contract(om2, v_new)
    w_new = ws - block.h * block._mix_numpy(upd_w.reshape(shape), 1).reshape(ws.shape)
    return v_new.reshape(shape), w_new.reshape(shape)
