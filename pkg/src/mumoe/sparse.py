"""Row-sparse weight storage and the reduced-cost matmul.

Storage is ELL-like: a fixed budget of k slots per row with ascending column
indices, matching the exact-k guarantee of canonical masks. Parity masks may
leave rows short; the shortfall is recorded per row and trailing slots are
dead padding (never touched by the kernels).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import ShapeError
from .selection import SparsityMask

PAD_COL = 0xFFFFFFFF


@dataclass(frozen=True)
class RowSparseMatrix:
    rows: int
    cols: int
    k: int
    col_idx: np.ndarray  # uint32 (rows, k), ascending per row, PAD_COL after row_counts[i]
    values: np.ndarray  # float32 (rows, k), zero in padded slots
    row_counts: np.ndarray  # int64 (rows,), == k everywhere for canonical masks

    @property
    def ragged(self) -> bool:
        return bool(np.any(self.row_counts != self.k))

    def nnz(self) -> int:
        return int(self.row_counts.sum())


def compress(w, mask: SparsityMask) -> RowSparseMatrix:
    """Gather active weights row by row; mask decides, values may be zero."""
    w = linalg.as_matrix(w)
    if mask.active.shape != w.shape:
        raise ShapeError(f"mask shape {mask.active.shape} != weight shape {w.shape}")
    d_prime, d = w.shape
    k = mask.k_active_per_row
    counts = mask.row_counts().astype(np.int64)
    if np.any(counts > k):
        raise ValueError("mask has rows exceeding the stated budget")
    col_idx = np.full((d_prime, k), PAD_COL, dtype=np.uint32)
    values = np.zeros((d_prime, k), dtype=np.float32)
    for i in range(d_prime):
        cols = np.flatnonzero(mask.active[i])
        col_idx[i, : cols.size] = cols
        values[i, : cols.size] = w[i, cols]
    return RowSparseMatrix(d_prime, d, k, col_idx, values, counts)


def dense(ws: RowSparseMatrix) -> np.ndarray:
    """Scatter back to a dense d' x d matrix (testing/inspection path)."""
    out = np.zeros((ws.rows, ws.cols), dtype=np.float32)
    for i in range(ws.rows):
        n = ws.row_counts[i]
        out[i, ws.col_idx[i, :n]] = ws.values[i, :n]
    return out


def sparse_matmul(ws: RowSparseMatrix, x) -> np.ndarray:
    """dense(ws) @ x using exactly row_counts[i] multiply-adds per row per token.

    Accumulation is float64 in ascending-column order, the same order the
    dense kernel uses, so a full-density ws reproduces matmul(w, x) bitwise.
    """
    x = linalg.as_matrix(x)
    if ws.cols != x.shape[0]:
        raise ShapeError(f"sparse_matmul: ws.cols={ws.cols} != x.rows={x.shape[0]}")
    x64 = x.astype(np.float64)
    v64 = ws.values.astype(np.float64)
    acc = np.zeros((ws.rows, x.shape[1]), dtype=np.float64)
    for slot in range(ws.k):
        live = ws.row_counts > slot
        if not live.any():
            break
        cols = ws.col_idx[live, slot].astype(np.intp)
        acc[live] += v64[live, slot][:, None] * x64[cols]
    return acc.astype(np.float32)


def approx_loss(w, ws: RowSparseMatrix, x) -> float:
    """Squared Frobenius norm of (w - dense(ws)) @ x, accumulated in float64.

    Row sums are reduced sequentially so the value is reproducible exactly.
    """
    w = linalg.as_matrix(w)
    if (ws.rows, ws.cols) != w.shape:
        raise ShapeError(f"sparse shape {(ws.rows, ws.cols)} != weight shape {w.shape}")
    x = linalg.as_matrix(x)
    if w.shape[1] != x.shape[0]:
        raise ShapeError(f"approx_loss: weight cols {w.shape[1]} != x rows {x.shape[0]}")
    diff = (w.astype(np.float64) - dense(ws).astype(np.float64)).astype(np.float32)
    prod = linalg.matmul(diff, x).astype(np.float64)
    total = 0.0
    for i in range(prod.shape[0]):
        total += float(np.sum(prod[i] * prod[i]))
    return total


def row_loss(w_row: np.ndarray, active_cols: np.ndarray, x: np.ndarray) -> float:
    """Loss contribution of one row given its active column set.

    Shared evaluator for search procedures: the exhaustive oracle and the
    pruner both call this, so comparisons are exact float comparisons.
    """
    d = w_row.shape[0]
    masked = np.zeros(d, dtype=np.float32)
    masked[active_cols] = w_row[active_cols]
    diff = (w_row.astype(np.float64) - masked.astype(np.float64)).astype(np.float32)
    prod = linalg.matmul(diff[None, :], x).astype(np.float64)
    return float(np.sum(prod[0] * prod[0]))


_HEADER = struct.Struct("<3I")


def dump_bytes(ws: RowSparseMatrix) -> bytes:
    """Header (rows, cols, k) as u32 LE, then col_idx u32 LE, then values f32 LE.

    Ragged rows are already padded with PAD_COL sentinels in col_idx, which
    load_bytes strips, so the fixed-k layout round-trips parity masks too.
    """
    parts = [
        _HEADER.pack(ws.rows, ws.cols, ws.k),
        ws.col_idx.astype("<u4").tobytes(),
        ws.values.astype("<f4").tobytes(),
    ]
    return b"".join(parts)


def load_bytes(buf: bytes) -> RowSparseMatrix:
    if len(buf) < _HEADER.size:
        raise ValueError("sparse dump truncated: missing header")
    rows, cols, k = _HEADER.unpack_from(buf, 0)
    need = _HEADER.size + rows * k * 4 * 2
    if len(buf) != need:
        raise ValueError(f"sparse dump has {len(buf)} bytes, expected {need}")
    off = _HEADER.size
    col_idx = np.frombuffer(buf, dtype="<u4", count=rows * k, offset=off).reshape(rows, k)
    off += rows * k * 4
    values = np.frombuffer(buf, dtype="<f4", count=rows * k, offset=off).reshape(rows, k)
    col_idx = np.ascontiguousarray(col_idx, dtype=np.uint32)
    values = np.ascontiguousarray(values, dtype=np.float32)
    pad = col_idx == PAD_COL
    counts = (k - np.count_nonzero(pad, axis=1)).astype(np.int64)
    live = ~pad
    if np.any(col_idx[live] >= cols):
        raise ValueError("sparse dump has column indices out of range")
    return RowSparseMatrix(rows, cols, k, col_idx, values, counts)
