"""Per-weight pruning scores: magnitude, activation-weighted, and inverse-Hessian.

All three produce a non-negative float32 score matrix shaped like the weight
matrix being pruned (d' x d). Higher score = more important weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg

LAMBDA_FLOOR = 1e-8


@dataclass(frozen=True)
class ActivationStats:
    """Summary of a layer's input activations X (d x T).

    feature_norms[j] = ||X[j, :]||_2. The gram matrix X X^T + lam*I is only
    materialized when inverse-Hessian scoring was requested; lambda_used
    records the resolved damping (0.0 when no gram was built).
    """

    feature_norms: np.ndarray
    gram: np.ndarray | None
    token_count: int
    lambda_used: float


def resolve_lambda(x64_sq_mean: float, coeff: float) -> float:
    """Damping = coeff * mean squared activation entry, floored at 1e-8.

    Relative damping keeps the gram conditioning scale-free: feeding c*X
    changes lambda by c^2, exactly like the gram diagonal.
    """
    return max(coeff * x64_sq_mean, LAMBDA_FLOOR)


def collect_stats(x, need_gram: bool = False, lambda_coeff: float = 0.01) -> ActivationStats:
    """Compute feature norms (and optionally the damped gram) for activations x."""
    x = linalg.as_matrix(x)
    norms = linalg.row_l2_norms(x).astype(np.float32)
    g = None
    lam = 0.0
    if need_gram:
        x64 = x.astype(np.float64)
        lam = resolve_lambda(float(np.mean(x64 * x64)), lambda_coeff)
        g = linalg.gram(x, lam)
    return ActivationStats(
        feature_norms=norms, gram=g, token_count=x.shape[1], lambda_used=lam
    )


def magnitude_score(w) -> np.ndarray:
    w = linalg.as_matrix(w)
    return np.abs(w)


def wanda_score(w, stats: ActivationStats) -> np.ndarray:
    """|w[i,j]| * ||X[j,:]||_2, the activation-aware score."""
    w = linalg.as_matrix(w)
    if stats.feature_norms.shape[0] != w.shape[1]:
        raise linalg.ShapeError(
            f"feature_norms length {stats.feature_norms.shape[0]} "
            f"!= weight cols {w.shape[1]}"
        )
    return np.abs(w) * stats.feature_norms[None, :].astype(np.float32)


def sparsegpt_score(w, stats: ActivationStats) -> np.ndarray:
    """w[i,j]^2 / c_j^2 with c = diag(Chol[(X X^T + lam I)^{-1}]).

    Scoring-only variant of the inverse-Hessian saliency; no weight updates.
    """
    w = linalg.as_matrix(w)
    if stats.gram is None:
        raise ValueError("sparsegpt_score needs stats collected with need_gram=True")
    if stats.gram.shape[0] != w.shape[1]:
        raise linalg.ShapeError(
            f"gram dim {stats.gram.shape[0]} != weight cols {w.shape[1]}"
        )
    inv = linalg.spd_inverse(stats.gram)
    c = linalg.cholesky(inv).diagonal().astype(np.float64)
    w64 = w.astype(np.float64)
    return ((w64 * w64) / (c * c)[None, :]).astype(np.float32)


def score_weights(method: str, w, stats: ActivationStats | None) -> np.ndarray:
    """Dispatch by method name; stats may be None only for magnitude."""
    if method == "magnitude":
        return magnitude_score(w)
    if stats is None:
        raise ValueError(f"method {method!r} needs activation stats")
    if method == "wanda":
        return wanda_score(w, stats)
    if method == "sparsegpt_score":
        return sparsegpt_score(w, stats)
    raise ValueError(f"unknown scoring method {method!r}")
