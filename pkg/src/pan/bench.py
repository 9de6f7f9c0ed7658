"""Throughput harness: PA vs Horn-Schunck vs raw pixel differences.

Every method sees the same seeded frame pairs.  One warm-up pass per method
is run and discarded, then ``reps`` timed passes over all pairs, interleaved
across methods so machine-speed drift hits all of them alike; the reported
per-pair time is the median pass time divided by the pair count.  BLAS is pinned to
one thread so ``threads`` is the only source of parallelism.
"""
from __future__ import annotations

import json
import os
import platform
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

from . import _kernels, pa
from .flow import horn_schunck

METHODS = ("PA", "HornSchunck", "RawDiff")
WORKERS_ENV = "PAN_WORKERS"


def default_workers() -> int:
    return max(1, int(os.environ.get(WORKERS_ENV, "1")))


@dataclass
class MethodTiming:
    method: str
    fps: float
    ms_per_pair: float
    ms_min: float
    ms_max: float
    size: int
    pairs: int
    reps: int
    threads: int
    params: Dict[str, float] = field(default_factory=dict)


def _machine() -> str:
    parts = [platform.machine(), platform.processor(), platform.python_implementation(), platform.python_version()]
    return " ".join(dict.fromkeys(p for p in parts if p))


@dataclass
class BenchReport:
    methods: Dict[str, MethodTiming]
    machine: str = field(default_factory=lambda: _machine())
    cpu_count: int = field(default_factory=lambda: os.cpu_count() or 1)

    def ratio(self, a: str = "PA", b: str = "HornSchunck") -> Optional[float]:
        if a in self.methods and b in self.methods:
            return self.methods[a].fps / self.methods[b].fps
        return None

    def to_dict(self) -> dict:
        return {"methods": {k: asdict(v) for k, v in self.methods.items()},
                "ratio_pa_over_hs": self.ratio(), "machine": self.machine, "cpu_count": self.cpu_count}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_table(self) -> str:
        lines = [f"{'method':<12} {'fps':>10} {'ms/pair':>9} {'min':>8} {'max':>8}  conditions"]
        for t in self.methods.values():
            cond = f"{t.size}x{t.size}, {t.pairs} pairs x {t.reps} reps, {t.threads} thread(s)"
            if t.params:
                cond += ", " + ", ".join(f"{k}={v:g}" for k, v in t.params.items())
            lines.append(f"{t.method:<12} {t.fps:>10.1f} {t.ms_per_pair:>9.3f} {t.ms_min:>8.3f} {t.ms_max:>8.3f}  {cond}")
        r = self.ratio()
        if r is not None:
            lines.append(f"PA / HornSchunck fps ratio: {r:.1f}x  ({self.machine}, {self.cpu_count} cpu)")
        return "\n".join(lines)


def make_pairs(size: int, pairs: int, seed: int = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Uniform random frames paired with a shifted, slightly noisy copy, float32 in [0, 1]."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(pairs):
        a = rng.random((3, size, size), dtype=np.float32)
        b = np.roll(a, shift=(1, 2), axis=(1, 2))
        b = np.clip(b + rng.normal(0, 0.01, b.shape).astype(np.float32), 0, 1)
        out.append((a, b))
    return out


def pa_weights(seed: int = 0) -> np.ndarray:
    cfg = pa.PAConfig(depth=1, channels=8, kernel=7)
    return pa.init_pa_weights(cfg, seed)["pa.conv0.weight"].value


def _raw_diff(a, b, eps=1e-12):
    d = b - a
    return np.sqrt(np.einsum("chw,chw->hw", d, d) + np.float32(eps))[None]


def method_fn(method: str, hs_iters: int = 100, hs_lambda: float = 0.01,
              weights: Optional[np.ndarray] = None) -> Callable:
    if method == "PA":
        w = _kernels.prepare_weights(pa_weights() if weights is None else weights)
        return lambda a, b: _kernels.pa_pair_k7(a, b, w, 1e-12)
    if method == "HornSchunck":
        return lambda a, b: horn_schunck(a, b, lam=hs_lambda, iters=hs_iters)
    if method == "RawDiff":
        return _raw_diff
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def _time_passes(fns: Dict[str, Callable], pairs, reps: int, threads: int) -> Dict[str, List[float]]:
    """Seconds per pass over ``pairs`` for each method; passes are interleaved across methods."""
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None

    def one_pass(fn):
        if pool is None:
            for a, b in pairs:
                fn(a, b)
        else:
            list(pool.map(lambda ab: fn(*ab), pairs))

    times: Dict[str, List[float]] = {name: [] for name in fns}
    try:
        with threadpool_limits(limits=1):
            for fn in fns.values():
                one_pass(fn)  # warm-up, discarded
            for _ in range(reps):
                for name, fn in fns.items():
                    t0 = time.perf_counter()
                    one_pass(fn)
                    times[name].append(time.perf_counter() - t0)
    finally:
        if pool is not None:
            pool.shutdown()
    return times


def _timing(method: str, times: List[float], n_pairs: int, size: int, reps: int, threads: int,
            hs_iters: int, hs_lambda: float) -> MethodTiming:
    per = [1000.0 * t / n_pairs for t in times]
    med = statistics.median(per)
    extra = {"iters": hs_iters, "lambda": hs_lambda} if method == "HornSchunck" else (
        {"depth": 1, "channels": 8, "kernel": 7} if method == "PA" else {"depth": 0})
    return MethodTiming(method=method, fps=1000.0 / med, ms_per_pair=med, ms_min=min(per), ms_max=max(per),
                        size=size, pairs=n_pairs, reps=reps, threads=threads, params=extra)


def benchmark_throughput(method: str, size: int = 224, pairs: int = 64, reps: int = 5, threads: int = 1,
                         hs_iters: int = 100, hs_lambda: float = 0.01, seed: int = 0,
                         frame_pairs=None) -> MethodTiming:
    frame_pairs = make_pairs(size, pairs, seed) if frame_pairs is None else frame_pairs
    times = _time_passes({method: method_fn(method, hs_iters, hs_lambda)}, frame_pairs, reps, threads)
    return _timing(method, times[method], len(frame_pairs), size, reps, threads, hs_iters, hs_lambda)


def run_benchmark(methods: Sequence[str] = METHODS, size: int = 224, pairs: int = 64, reps: int = 5,
                  threads: int = 1, hs_iters: int = 100, hs_lambda: float = 0.01, seed: int = 0) -> BenchReport:
    frame_pairs = make_pairs(size, pairs, seed)
    fns = {m: method_fn(m, hs_iters, hs_lambda) for m in methods}
    times = _time_passes(fns, frame_pairs, reps, threads)
    out = {m: _timing(m, times[m], len(frame_pairs), size, reps, threads, hs_iters, hs_lambda) for m in methods}
    return BenchReport(methods=out)


def time_encodings(size: int = 224, m: int = 4, reps: int = 15, seed: int = 0) -> Dict[str, float]:
    """Median per-pair milliseconds of the E1 and E2 PA paths on one m-frame stack.

    Both paths run the same reference convolution per frame; E2 additionally
    computes the sigmoid gate, the channel mean and their product.  Runs are
    interleaved so drift affects both equally; ``e2_minus_e1_ms`` is the
    median of the per-repetition paired differences.
    """
    rng = np.random.default_rng(seed)
    frames = [rng.random((3, size, size), dtype=np.float32) for _ in range(m)]
    cfgs = {e: pa.PAConfig(encoding=e) for e in (pa.Encoding.E1, pa.Encoding.E2)}
    params = pa.init_pa_weights(cfgs[pa.Encoding.E1], seed)

    def run(enc):
        stack = pa.pa_stack(frames, params, cfgs[enc])
        return pa.encode(stack, enc)

    samples = {e: [] for e in cfgs}
    with threadpool_limits(limits=1):
        for e in cfgs:
            run(e)
        for _ in range(reps):
            for e in cfgs:
                t0 = time.perf_counter()
                run(e)
                samples[e].append(1000.0 * (time.perf_counter() - t0) / (m - 1))
    e1, e2 = samples[pa.Encoding.E1], samples[pa.Encoding.E2]
    return {"e1_ms_per_pair": statistics.median(e1), "e2_ms_per_pair": statistics.median(e2),
            "e2_minus_e1_ms": statistics.median(b - a for a, b in zip(e1, e2))}
