"""Dense linear algebra kernels with a fixed, reproducible reduction order.

Matrices are plain 2-D float32 numpy arrays (row-major). Products accumulate
in float64 and round to float32 on store; the accumulation over the shared
dimension is strictly sequential (k = 0, 1, 2, ...), so results are bitwise
identical across runs and thread counts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Operand shapes (or required structure, e.g. symmetry) do not match."""


class NotPositiveDefiniteError(ArithmeticError):
    """Cholesky hit a non-positive pivot; `pivot` is the failing index."""

    def __init__(self, pivot: int, value: float, context: str = ""):
        msg = f"matrix is not positive definite: pivot {pivot} = {value:g}"
        if context:
            msg = f"{context}: {msg}"
        super().__init__(msg)
        self.pivot = pivot
        self.value = value


def as_matrix(a) -> np.ndarray:
    """Coerce to a C-contiguous float32 2-D array, rejecting non-finite data."""
    m = np.ascontiguousarray(a, dtype=np.float32)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix contains non-finite entries")
    return m


def _matmul64(a64: np.ndarray, b64: np.ndarray) -> np.ndarray:
    # Sequential accumulation over k. Each step is a rank-1 update, so for
    # every output element the additions happen in k-order, exactly like a
    # naive triple loop. Do not chunk: chunking reorders the reduction.
    m, k = a64.shape
    n = b64.shape[1]
    acc = np.zeros((m, n), dtype=np.float64)
    tmp = np.empty((m, n), dtype=np.float64)
    for kk in range(k):
        np.multiply(a64[:, kk, None], b64[kk], out=tmp)
        acc += tmp
    return acc


def matmul(a, b) -> np.ndarray:
    """Product a @ b, float64 accumulation in sequential k-order, float32 result."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return _matmul64(a.astype(np.float64), b.astype(np.float64)).astype(np.float32)


def row_l2_norms(x) -> np.ndarray:
    """Per-row Euclidean norms of x (d x T), accumulated in float64."""
    x = as_matrix(x)
    x64 = x.astype(np.float64)
    return np.sqrt(np.sum(x64 * x64, axis=1))


def gram(x, lam: float) -> np.ndarray:
    """X X^T + lam*I for x of shape d x T; exactly symmetric by construction."""
    x = as_matrix(x)
    if lam < 0:
        raise ValueError(f"damping must be non-negative, got {lam}")
    g = _matmul64(x.astype(np.float64), x.astype(np.float64).T)
    # Mirror the upper triangle so g[i, j] and g[j, i] are the same float.
    iu = np.triu_indices(g.shape[0], k=1)
    g[(iu[1], iu[0])] = g[iu]
    g[np.diag_indices_from(g)] += lam
    return g.astype(np.float32)


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular Cholesky factor in packed row storage.

    Row i occupies packed[i*(i+1)/2 : i*(i+1)/2 + i + 1]; entries above the
    diagonal are implicitly zero and the diagonal is strictly positive.
    """

    dim: int
    packed: np.ndarray  # float32, length dim*(dim+1)//2

    def diagonal(self) -> np.ndarray:
        idx = np.arange(self.dim)
        return self.packed[idx * (idx + 1) // 2 + idx]

    def full(self) -> np.ndarray:
        out = np.zeros((self.dim, self.dim), dtype=np.float32)
        pos = 0
        for i in range(self.dim):
            out[i, : i + 1] = self.packed[pos : pos + i + 1]
            pos += i + 1
        return out


def cholesky(a) -> CholeskyFactor:
    """Factor a symmetric positive-definite matrix as L L^T.

    Raises NotPositiveDefiniteError with the failing pivot index when the
    matrix is not positive definite. Callers own any re-damping policy.
    """
    a = as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ShapeError(f"cholesky: matrix must be square, got {a.shape}")
    if not np.array_equal(a, a.T):
        raise ShapeError("cholesky: matrix is not symmetric")
    a64 = a.astype(np.float64)
    low = np.zeros((n, n), dtype=np.float64)
    for j in range(n):
        s = a64[j, j] - np.sum(low[j, :j] * low[j, :j])
        if s <= 0.0 or not np.isfinite(s):
            raise NotPositiveDefiniteError(j, float(s))
        low[j, j] = np.sqrt(s)
        if j + 1 < n:
            below = a64[j + 1 :, j] - np.sum(low[j + 1 :, :j] * low[j, :j], axis=1)
            low[j + 1 :, j] = below / low[j, j]
    packed = np.concatenate([low[i, : i + 1] for i in range(n)]).astype(np.float32)
    factor = CholeskyFactor(dim=n, packed=packed)
    if np.any(factor.diagonal() <= 0.0):
        bad = int(np.argmax(factor.diagonal() <= 0.0))
        raise NotPositiveDefiniteError(bad, float(factor.diagonal()[bad]))
    return factor


def _solve_lower(low64: np.ndarray, b64: np.ndarray) -> np.ndarray:
    # Forward substitution, all right-hand sides at once.
    n = low64.shape[0]
    y = np.zeros_like(b64)
    for i in range(n):
        y[i] = (b64[i] - np.sum(low64[i, :i, None] * y[:i], axis=0)) / low64[i, i]
    return y


def _solve_lower_t(low64: np.ndarray, b64: np.ndarray) -> np.ndarray:
    # Back substitution against L^T.
    n = low64.shape[0]
    y = np.zeros_like(b64)
    for i in range(n - 1, -1, -1):
        y[i] = (b64[i] - np.sum(low64[i + 1 :, i, None] * y[i + 1 :], axis=0)) / low64[i, i]
    return y


def spd_inverse(a) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky solves.

    The result is symmetrized exactly before the float32 store.
    """
    a = as_matrix(a)
    factor = cholesky(a)
    low64 = factor.full().astype(np.float64)
    eye = np.eye(factor.dim, dtype=np.float64)
    inv = _solve_lower_t(low64, _solve_lower(low64, eye))
    inv = 0.5 * (inv + inv.T)
    return inv.astype(np.float32)
