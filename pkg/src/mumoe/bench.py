"""Selection-strategy micro-benchmark with a correctness gate before timing.

Every cell (d, d', rho) draws one random score matrix; all strategies time
mask construction on that same input, and timing is only reported after
their canonical masks are verified identical.
"""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import selection
from .selection import SelectionParams

BENCH_FIELDS = ("strategy", "d", "d_prime", "rho", "mean_ns", "std_ns", "reps")


class EquivalenceGateError(AssertionError):
    """Strategies disagreed on a cell's canonical mask; timing suppressed."""


def thread_cap() -> int:
    raw = os.environ.get("MUMOE_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return os.cpu_count() or 1


@dataclass(frozen=True)
class BenchSpec:
    d_values: tuple[int, ...] = (64, 256, 1024)
    d_prime_values: tuple[int, ...] = (64,)
    rho_values: tuple[float, ...] = (0.25, 0.5, 0.75)
    strategies: tuple[str, ...] = selection.STRATEGIES
    reps: int = 5
    warmup: int = 2
    seed: int = 0
    include_parallel: bool = False

    def __post_init__(self):
        if self.reps < 3:
            raise ValueError("reps must be >= 3")
        if not self.strategies:
            raise ValueError("need at least one strategy")
        for s in self.strategies:
            if s not in selection.STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        if any(v <= 0 for v in self.d_values + self.d_prime_values):
            raise ValueError("dimensions must be positive")


def _parallel_select(scores, params: SelectionParams, workers: int):
    # Row-parallel variant: split rows across threads; results must match
    # the single-threaded mask exactly (row independence).
    chunks = np.array_split(np.arange(scores.shape[0]), workers)
    out = np.zeros(scores.shape, dtype=bool)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futs = [(idx, pool.submit(selection.select, scores[idx], params))
                for idx in chunks if idx.size]
        for idx, fut in futs:
            out[idx] = fut.result().active
    return selection.SparsityMask(out, params.k)


def _time_one(fn, warmup: int, reps: int) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - t0)
    arr = np.asarray(samples, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def run_bench(spec: BenchSpec) -> list[dict]:
    """One CSV row per (strategy, d, d', rho) cell; gate failures raise."""
    rng = np.random.default_rng(spec.seed)
    workers = thread_cap()
    rows: list[dict] = []
    for d in spec.d_values:
        for d_prime in spec.d_prime_values:
            for rho in spec.rho_values:
                scores = rng.random((d_prime, d)).astype(np.float32)
                params = {s: SelectionParams(rho, d, strategy=s)
                          for s in spec.strategies}
                reference = selection.select_sort(
                    scores, SelectionParams(rho, d, strategy="sort"))
                for s in spec.strategies:
                    got = selection.select(scores, params[s])
                    if not np.array_equal(got.active, reference.active):
                        raise EquivalenceGateError(
                            f"strategy {s} disagrees with sort at "
                            f"d={d} d'={d_prime} rho={rho}")
                timed: list[tuple[str, object]] = [
                    (s, (lambda s=s: selection.select(scores, params[s])))
                    for s in spec.strategies
                ]
                if spec.include_parallel and workers > 1:
                    for s in spec.strategies:
                        par = _parallel_select(scores, params[s], workers)
                        if not np.array_equal(par.active, reference.active):
                            raise EquivalenceGateError(
                                f"parallel {s} disagrees with sort at "
                                f"d={d} d'={d_prime} rho={rho}")
                        timed.append((f"{s}+par{workers}",
                                      lambda s=s: _parallel_select(
                                          scores, params[s], workers)))
                for name, fn in timed:
                    mean_ns, std_ns = _time_one(fn, spec.warmup, spec.reps)
                    rows.append({"strategy": name, "d": d, "d_prime": d_prime,
                                 "rho": rho, "mean_ns": mean_ns,
                                 "std_ns": std_ns, "reps": spec.reps})
    return rows


def kth_spread(rows) -> dict[tuple[int, int], float]:
    """Relative spread of kth_threshold mean time across rho, per (d, d').

    Informational: threshold search does roughly the same work at any rho,
    but wall-clock behavior is hardware-dependent, so this is reported, not
    asserted.
    """
    cells: dict[tuple[int, int], list[float]] = {}
    for r in rows:
        if r["strategy"] == "kth_threshold":
            cells.setdefault((r["d"], r["d_prime"]), []).append(r["mean_ns"])
    return {key: (max(v) - min(v)) / max(v) for key, v in cells.items() if v}


def write_csv(rows, path_or_file):
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        writer = csv.DictWriter(f, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if own:
            f.close()
