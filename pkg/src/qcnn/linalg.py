"""Dense real linear algebra with deterministic accumulation.

Matrices are plain 2-D float64 ndarrays.  Every exported operation validates
shape and finiteness, and its reductions run in a fixed order so repeated
calls are bit-identical.  Sizes here stay small (a few hundred at most), so
clarity and reproducibility win over BLAS throughput.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Operand dimensions do not satisfy the operation's contract."""


class SymmetryError(ValueError):
    """A symmetric-input contract was violated."""


class FactorizationError(ArithmeticError):
    """Matrix factorization failed; the message names the failing pivot."""


class EigenSolverError(ArithmeticError):
    """Eigenvalue iteration failed to converge."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got ndim={arr.ndim}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ShapeError(f"{name}: dimensions must be nonzero, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: entries must be finite")
    return arr


def _check_symmetric(a: np.ndarray, name: str, tol: float = 1e-10) -> None:
    scale = max(1.0, float(np.abs(a).max()))
    dev = float(np.abs(a - a.T).max())
    if dev > tol * scale:
        raise SymmetryError(f"{name}: not symmetric (max |A - A^T| = {dev:.3e})")


def matmul(a, b) -> np.ndarray:
    """Matrix product with left-to-right accumulation over the inner index.

    Each output entry is built exactly as the naive triple loop would build
    it: one rounded multiply and one rounded add per inner-index step, in
    index order.  This keeps results bit-identical to that reference order.
    """
    A = as_matrix(a, "a")
    B = as_matrix(b, "b")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"inner dimensions differ: {A.shape} x {B.shape}")
    out = np.zeros((A.shape[0], B.shape[1]))
    for k in range(A.shape[1]):
        out += A[:, k, np.newaxis] * B[k]
    return out


def cholesky(g, jitter: float = 1e-12) -> np.ndarray:
    """Lower-triangular L with L L^T = G + jitter*I.

    ``jitter`` >= 0 is added to the diagonal before factorization so that
    numerically rank-deficient positive-semidefinite inputs still factor.
    """
    G = as_matrix(g, "g")
    if G.shape[0] != G.shape[1]:
        raise ShapeError(f"g: expected square, got {G.shape}")
    if jitter < 0:
        raise ValueError(f"jitter must be >= 0, got {jitter}")
    _check_symmetric(G, "g")
    n = G.shape[0]
    a = 0.5 * (G + G.T) + jitter * np.eye(n)
    low = np.zeros_like(a)
    for j in range(n):
        pivot = a[j, j] - float(np.dot(low[j, :j], low[j, :j]))
        if pivot <= 0.0:
            raise FactorizationError(
                f"pivot {j} is non-positive ({pivot:.6e}); "
                f"matrix is not positive definite within jitter={jitter:g}")
        low[j, j] = np.sqrt(pivot)
        if j + 1 < n:
            low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return low


def sym_eigenvalues(s, max_sweeps: int = 100) -> np.ndarray:
    """Eigenvalues of a symmetric matrix, sorted descending.

    Cyclic Jacobi rotations; converges quadratically for the modest sizes
    used here and preserves the trace to rounding.
    """
    S = as_matrix(s, "s")
    if S.shape[0] != S.shape[1]:
        raise ShapeError(f"s: expected square, got {S.shape}")
    _check_symmetric(S, "s")
    a = 0.5 * (S + S.T)
    n = a.shape[0]
    if n == 1:
        return a[0].copy()
    scale = float(np.abs(a).max())
    if scale == 0.0:
        return np.zeros(n)
    stop = 1e-14 * scale
    skip = 1e-18 * scale
    for _ in range(max_sweeps):
        off = float(np.abs(a - np.diag(np.diag(a))).max())
        if off <= stop:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0.0 else 1.0
                t = t / (abs(theta) + np.sqrt(1.0 + theta * theta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * c
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                a[p, q] = 0.0
                a[q, p] = 0.0
    else:
        raise EigenSolverError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
    return np.sort(np.diag(a))[::-1].copy()
