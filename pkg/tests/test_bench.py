import json
import os

import numpy as np
import pytest

from pan import bench, pa


def test_methods_agree_on_pairs():
    pairs = bench.make_pairs(32, 2, seed=1)
    for (a, b), (c, d) in zip(pairs, bench.make_pairs(32, 2, seed=1)):
        assert np.array_equal(a, c) and np.array_equal(b, d)
    for m in bench.METHODS:
        out = bench.method_fn(m)(*pairs[0])
        arrays = [out.u, out.v] if m == "HornSchunck" else [out]
        assert all(np.all(np.isfinite(x)) for x in arrays)


def test_report_json_and_table():
    report = bench.run_benchmark(size=32, pairs=2, reps=2, hs_iters=5)
    d = json.loads(report.to_json())
    assert set(d["methods"]) == set(bench.METHODS)
    for m in bench.METHODS:
        t = d["methods"][m]
        assert t["fps"] > 0 and t["size"] == 32 and t["threads"] == 1
        assert t["ms_min"] <= t["ms_per_pair"] <= t["ms_max"]
    assert d["methods"]["HornSchunck"]["params"]["iters"] == 5
    assert d["ratio_pa_over_hs"] == pytest.approx(report.ratio())
    assert "HornSchunck" in report.to_table()


def test_workers_env(monkeypatch):
    monkeypatch.delenv(bench.WORKERS_ENV, raising=False)
    assert bench.default_workers() == 1
    monkeypatch.setenv(bench.WORKERS_ENV, "3")
    assert bench.default_workers() == 3


def test_pa_faster_than_hs_and_rawdiff_fastest():
    report = bench.run_benchmark(size=112, pairs=8, reps=3)
    fps = {k: v.fps for k, v in report.methods.items()}
    assert fps["PA"] > fps["HornSchunck"]
    assert fps["RawDiff"] >= fps["PA"]


@pytest.mark.skipif((os.cpu_count() or 1) < 2, reason="needs at least two cores to measure thread scaling")
def test_doubling_threads_does_not_slow_pa():
    pairs = bench.make_pairs(224, 16)
    one = bench.benchmark_throughput("PA", threads=1, frame_pairs=pairs, reps=3)
    two = bench.benchmark_throughput("PA", threads=2, frame_pairs=pairs, reps=3)
    assert two.fps >= 0.9 * one.fps


def test_e2_path_costs_more_than_e1():
    t = bench.time_encodings(size=224, reps=15)
    assert t["e2_minus_e1_ms"] > 0
    assert pa.estimate_flops(pa.PAConfig(encoding=pa.Encoding.E2), 224, 224, m=4) > \
        pa.estimate_flops(pa.PAConfig(encoding=pa.Encoding.E1), 224, 224, m=4)
