"""Dense eigenvalues: Householder Hessenberg reduction plus shifted complex QR."""

from __future__ import annotations

import numpy as np


class EigenConvergenceError(ArithmeticError):
    pass


def hessenberg(a: np.ndarray) -> np.ndarray:
    """Upper Hessenberg matrix orthogonally similar to ``a`` (Householder reflections)."""
    h = np.array(a, dtype=np.result_type(a, np.float64), copy=True)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1 :, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        phase = x[0] / abs(x[0]) if x[0] != 0 else 1.0
        v[0] += phase * alpha
        v /= np.linalg.norm(v)
        h[k + 1 :, k:] -= 2.0 * np.outer(v, v.conj() @ h[k + 1 :, k:])
        h[:, k + 1 :] -= 2.0 * np.outer(h[:, k + 1 :] @ v, v.conj())
        h[k + 2 :, k] = 0.0
    return h


def _wilkinson(a, b, c, d) -> complex:
    # eigenvalue of [[a, b], [c, d]] closest to d
    tr = a + d
    det = a * d - b * c
    disc = np.sqrt(complex(tr * tr / 4 - det))
    l1, l2 = tr / 2 + disc, tr / 2 - disc
    return l1 if abs(l1 - d) < abs(l2 - d) else l2


def _qr_sweep(h: np.ndarray, lo: int, hi: int, mu: complex) -> None:
    # one shifted QR step on the active window h[lo:hi+1, lo:hi+1], via Givens rotations
    idx = range(lo, hi + 1)
    for k in idx:
        h[k, k] -= mu
    rots = []
    for k in range(lo, hi):
        x, y = h[k, k], h[k + 1, k]
        r = np.hypot(abs(x), abs(y))
        if r == 0.0:
            c, s = 1.0 + 0j, 0j
        else:
            c, s = x / r, y / r
        rows = h[[k, k + 1], k : hi + 1]
        h[k, k : hi + 1] = np.conj(c) * rows[0] + np.conj(s) * rows[1]
        h[k + 1, k : hi + 1] = -s * rows[0] + c * rows[1]
        rots.append((c, s))
    for k, (c, s) in zip(range(lo, hi), rots):
        top = min(k + 2, hi)
        cols = h[lo : top + 1, [k, k + 1]]
        h[lo : top + 1, k] = cols[:, 0] * c + cols[:, 1] * s
        h[lo : top + 1, k + 1] = -cols[:, 0] * np.conj(s) + cols[:, 1] * np.conj(c)
    for k in idx:
        h[k, k] += mu


def eigen(matrix, max_iter: int | None = None, tol: float | None = None) -> np.ndarray:
    """All eigenvalues of a real (or complex) square matrix, as a complex array.

    Reduces to Hessenberg form, then runs single-shift QR with Wilkinson
    shifts and deflation on negligible subdiagonal entries. Raises
    ``EigenConvergenceError`` after ``max_iter`` sweeps (default 500 n).
    """
    a = np.asarray(matrix)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"eigen needs a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex)
    h = hessenberg(a).astype(complex)
    eps = np.finfo(float).eps if tol is None else tol
    cap = 500 * n if max_iter is None else max_iter
    out = np.zeros(n, dtype=complex)
    hi, sweeps, stuck = n - 1, 0, 0
    scale = max(np.abs(h).max(), np.finfo(float).tiny)
    while hi >= 0:
        l = hi
        while l > 0:
            if abs(h[l, l - 1]) <= eps * (abs(h[l, l]) + abs(h[l - 1, l - 1]) or scale):
                h[l, l - 1] = 0.0
                break
            l -= 1
        if l == hi:
            out[hi] = h[hi, hi]
            hi -= 1
            stuck = 0
            continue
        if sweeps >= cap:
            raise EigenConvergenceError(f"QR iteration did not converge within {cap} sweeps ({hi + 1} eigenvalues left)")
        stuck += 1
        if stuck % 11 == 0:
            # exceptional shift breaks rare cycles
            mu = h[hi, hi] + 0.75 * abs(h[hi, hi - 1]) * (1 + 1j)
        else:
            mu = _wilkinson(h[hi - 1, hi - 1], h[hi - 1, hi], h[hi, hi - 1], h[hi, hi])
        _qr_sweep(h, l, hi, mu)
        sweeps += 1
    return out


def characteristic_roots(matrix) -> np.ndarray:
    """Eigenvalues as roots of the characteristic polynomial; an oracle for 2x2 and 3x3."""
    a = np.asarray(matrix, dtype=float)
    n = a.shape[0]
    if n == 2:
        coeffs = [1.0, -np.trace(a), np.linalg.det(a)]
    elif n == 3:
        minors = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0] + a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0] + a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
        coeffs = [1.0, -np.trace(a), minors, -np.linalg.det(a)]
    else:
        raise ValueError("characteristic_roots handles 2x2 and 3x3 only")
    return np.roots(coeffs).astype(complex)
