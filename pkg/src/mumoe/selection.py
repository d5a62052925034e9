"""Row-wise top-k mask selection: three strategies, one canonical answer.

Canonical tie handling prefers the lower column index so every strategy lands
on the same mask with exactly k active weights per row. Parity mode instead
reproduces strict-threshold semantics (keep score > k_c-th smallest), which
drops threshold ties and can leave fewer than k active.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .linalg import ShapeError

STRATEGIES = ("sort", "heap_topk", "kth_threshold")
TIE_MODES = ("canonical", "parity")


def active_count(rho: float, d: int) -> int:
    """k = floor(rho*d), clamped to [1, d]."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must be in (0, 1], got {rho}")
    return min(max(int(rho * d), 1), d)


@dataclass(frozen=True)
class SelectionParams:
    rho: float
    d: int
    strategy: str = "sort"
    tie_mode: str = "canonical"
    k: int = field(init=False)
    k_c: int = field(init=False)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.tie_mode not in TIE_MODES:
            raise ValueError(f"unknown tie_mode {self.tie_mode!r}")
        k = active_count(self.rho, self.d)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "k_c", self.d - k)


@dataclass(frozen=True)
class SparsityMask:
    """Boolean d' x d activity map plus the per-row budget it was built with."""

    active: np.ndarray
    k_active_per_row: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.active.shape

    def row_counts(self) -> np.ndarray:
        return np.count_nonzero(self.active, axis=1)


def _check_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float32)
    if s.ndim != 2:
        raise ShapeError(f"scores must be 2-D, got ndim={s.ndim}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores contain non-finite entries")
    return s


def select_sort(scores, p: SelectionParams) -> SparsityMask:
    """Full stable sort per row; ties resolve to lower column index."""
    s = _check_scores(scores)
    d_prime, d = s.shape
    if d != p.d:
        raise ShapeError(f"params built for d={p.d}, scores have d={d}")
    if p.k == d:
        return SparsityMask(np.ones(s.shape, dtype=bool), p.k)
    # Stable argsort of -scores: equal scores keep ascending column order,
    # so the first k are exactly the canonical winners.
    order = np.argsort(-s, axis=1, kind="stable")
    active = np.zeros(s.shape, dtype=bool)
    np.put_along_axis(active, order[:, : p.k], True, axis=1)
    if p.tie_mode == "parity":
        # k == d returned above, so k_c >= 1 here.
        kth_smallest = np.sort(s, axis=1)[:, p.k_c - 1]
        active = s > kth_smallest[:, None]
    return SparsityMask(active, p.k)


def select_heap_topk(scores, p: SelectionParams) -> SparsityMask:
    """Size-k min-heap per row, keyed (score, -col) so low columns win ties."""
    s = _check_scores(scores)
    d_prime, d = s.shape
    if d != p.d:
        raise ShapeError(f"params built for d={p.d}, scores have d={d}")
    if p.k == d:
        return SparsityMask(np.ones(s.shape, dtype=bool), p.k)
    active = np.zeros(s.shape, dtype=bool)
    for i in range(d_prime):
        row = s[i]
        heap = [(float(row[j]), -j) for j in range(p.k)]
        heapq.heapify(heap)
        for j in range(p.k, d):
            key = (float(row[j]), -j)
            if key > heap[0]:
                heapq.heapreplace(heap, key)
        cols = [-neg for _, neg in heap]
        active[i, cols] = True
    mask = SparsityMask(active, p.k)
    if p.tie_mode == "parity":
        return _parity_from_threshold(s, p)
    return mask


def _kth_smallest_per_row(s: np.ndarray, k_c: int) -> np.ndarray:
    # Introselect: expected-linear quickselect with a deterministic
    # heap-based fallback on bad pivot sequences. Value-only partition, so
    # the pivot strategy cannot affect the selected threshold.
    return np.partition(s, k_c - 1, axis=1)[:, k_c - 1]


def _parity_from_threshold(s: np.ndarray, p: SelectionParams) -> SparsityMask:
    if p.k_c == 0:
        return SparsityMask(np.ones(s.shape, dtype=bool), p.k)
    val = _kth_smallest_per_row(s, p.k_c)
    return SparsityMask(s > val[:, None], p.k)


def select_kth_threshold(scores, p: SelectionParams) -> SparsityMask:
    """Quickselect the k_c-th smallest score per row, keep everything above it.

    Canonical mode tops up threshold ties in ascending column order until the
    row holds exactly k; parity mode keeps the strict inequality as-is.
    """
    s = _check_scores(scores)
    d_prime, d = s.shape
    if d != p.d:
        raise ShapeError(f"params built for d={p.d}, scores have d={d}")
    if p.k_c == 0:
        return SparsityMask(np.ones(s.shape, dtype=bool), p.k)
    val = _kth_smallest_per_row(s, p.k_c)
    above = s > val[:, None]
    if p.tie_mode == "parity":
        return SparsityMask(above, p.k)
    # Exactly-k: rows short of budget admit threshold-valued columns
    # left-to-right until full.
    need = p.k - np.count_nonzero(above, axis=1)
    at = s == val[:, None]
    fill = at & (np.cumsum(at, axis=1) <= need[:, None])
    return SparsityMask(above | fill, p.k)


_DISPATCH = {
    "sort": select_sort,
    "heap_topk": select_heap_topk,
    "kth_threshold": select_kth_threshold,
}


def select(scores, p: SelectionParams) -> SparsityMask:
    return _DISPATCH[p.strategy](scores, p)
