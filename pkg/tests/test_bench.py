import numpy as np
import pytest

from mumoe import bench, selection
from mumoe.bench import BenchSpec

SMALL = BenchSpec(d_values=(16, 32), d_prime_values=(8,), rho_values=(0.25, 0.75),
                  strategies=selection.STRATEGIES, reps=3, warmup=1, seed=0)


def test_spec_validation():
    with pytest.raises(ValueError):
        BenchSpec(reps=2)
    with pytest.raises(ValueError):
        BenchSpec(strategies=())
    with pytest.raises(ValueError):
        BenchSpec(strategies=("bogosort",))
    with pytest.raises(ValueError):
        BenchSpec(d_values=(0,))


def test_row_count_and_fields():
    rows = bench.run_bench(SMALL)
    assert len(rows) == 3 * 2 * 1 * 2  # strategies x d x d' x rho
    for row in rows:
        assert tuple(row) == bench.BENCH_FIELDS
        assert row["mean_ns"] > 0
        assert row["std_ns"] >= 0
        assert row["reps"] == 3


def test_same_seed_same_cells():
    a = bench.run_bench(SMALL)
    b = bench.run_bench(SMALL)
    key = lambda r: (r["strategy"], r["d"], r["d_prime"], r["rho"])
    assert [key(r) for r in a] == [key(r) for r in b]


def test_kth_spread_reports_per_cell():
    rows = bench.run_bench(SMALL)
    spread = bench.kth_spread(rows)
    assert set(spread) == {(16, 8), (32, 8)}
    assert all(0.0 <= v < 1.0 for v in spread.values())


def test_gate_failure_suppresses_timing(monkeypatch):
    real = selection.select

    def corrupted(scores, params):
        mask = real(scores, params)
        if params.strategy == "heap_topk":
            flipped = mask.active.copy()
            flipped[0] = ~flipped[0]
            return selection.SparsityMask(flipped, mask.k_active_per_row)
        return mask

    monkeypatch.setattr(bench.selection, "select", corrupted)
    with pytest.raises(bench.EquivalenceGateError):
        bench.run_bench(SMALL)


def test_parallel_variant_rows(monkeypatch):
    monkeypatch.setenv("MUMOE_THREADS", "2")
    spec = BenchSpec(d_values=(16,), d_prime_values=(8,), rho_values=(0.5,),
                     strategies=("sort",), reps=3, warmup=0, seed=1,
                     include_parallel=True)
    rows = bench.run_bench(spec)
    names = {r["strategy"] for r in rows}
    assert names == {"sort", "sort+par2"}


def test_thread_cap_env(monkeypatch):
    monkeypatch.setenv("MUMOE_THREADS", "3")
    assert bench.thread_cap() == 3
    monkeypatch.setenv("MUMOE_THREADS", "junk")
    assert bench.thread_cap() >= 1


def test_write_csv(tmp_path):
    rows = bench.run_bench(BenchSpec(d_values=(16,), d_prime_values=(4,),
                                     rho_values=(0.5,), strategies=("sort",),
                                     reps=3, warmup=0))
    out = tmp_path / "bench.csv"
    bench.write_csv(rows, out)
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(bench.BENCH_FIELDS)
    assert len(lines) == 2
