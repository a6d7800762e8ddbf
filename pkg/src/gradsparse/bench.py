"""Compression latency microbenchmarks on synthetic flat tensors.

Per (size, ratio, compressor) cell: warm-up calls are discarded, then the
median of ``repetitions`` timed calls is reported together with the speedup
over exact top-k (``median_topk / median_candidate``). Timing uses the
monotonic ``perf_counter_ns`` clock. CPU only.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compressors import COMPRESSORS, make_compressor
from .errors import InvalidInput

log = logging.getLogger(__name__)

DEFAULT_SIZES = (262_144, 2_621_440, 26_214_400)
LARGE_SIZE = 262_144_000
DEFAULT_RATIOS = (0.1, 0.01, 0.001)
DEFAULT_COMPRESSORS = ("topk", "dgc", "gaussian", "sidco_e", "sidco_gp", "sidco_p")
CSV_COLUMNS = ("compressor", "size", "delta", "median_ns", "p10_ns", "p90_ns", "speedup_vs_topk", "k_hat_mean")
TOPK_ALGORITHM = "numpy.partition introselect on |g| (O(d) average), tie fix-up by index"


@dataclass(frozen=True)
class BenchSpec:
    sizes: tuple = DEFAULT_SIZES
    ratios: tuple = DEFAULT_RATIOS
    compressors: tuple = DEFAULT_COMPRESSORS
    repetitions: int = 30
    warmup: int = 5
    law: str = "gaussian"  # gaussian | laplace | powerlaw
    power: float = 0.7
    seed: int = 0
    include_large: bool = False

    def __post_init__(self):
        if self.repetitions < 3:
            raise InvalidInput("repetitions must be >= 3")
        if self.warmup < 0:
            raise InvalidInput("warmup must be >= 0")
        if not self.sizes or min(self.sizes) < 1:
            raise InvalidInput("sizes must be positive")
        if self.law not in ("gaussian", "laplace", "powerlaw"):
            raise InvalidInput(f"unknown data law {self.law!r}")
        unknown = [c for c in self.compressors if c not in COMPRESSORS]
        if unknown:
            raise InvalidInput(f"unknown compressors {unknown}; valid names: {', '.join(COMPRESSORS)}")

    @property
    def all_sizes(self):
        return tuple(self.sizes) + ((LARGE_SIZE,) if self.include_large else ())


@dataclass
class BenchRow:
    compressor: str
    size: int
    delta: float
    median_ns: int
    p10_ns: int
    p90_ns: int
    speedup_vs_topk: float
    k_hat_mean: float
    checksum: float = field(default=0.0, repr=False)


def synthetic_tensor(size: int, law: str = "gaussian", seed: int = 0, power: float = 0.7) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if law == "gaussian":
        return rng.standard_normal(size)
    if law == "laplace":
        return rng.laplace(0.0, 1.0, size)
    if law == "powerlaw":
        mags = np.arange(1, size + 1, dtype=np.float64) ** -power
        signs = rng.choice(np.array([-1.0, 1.0]), size)
        return rng.permutation(mags) * signs
    raise InvalidInput(f"unknown data law {law!r}")


def time_calls(fn, grad, repetitions: int, warmup: int = 0):
    """Call ``fn(grad, i)`` ``warmup + repetitions`` times.

    Returns the timed durations (ns), the achieved counts of the timed calls
    and a checksum over every timed output so no result goes unused.
    """
    for i in range(warmup):
        fn(grad, i)
    times = np.empty(repetitions, dtype=np.int64)
    k_hats = np.empty(repetitions, dtype=np.int64)
    checksum = 0.0
    for r in range(repetitions):
        t0 = time.perf_counter_ns()
        sparse, stats = fn(grad, warmup + r)
        times[r] = time.perf_counter_ns() - t0
        k_hats[r] = stats.k_hat
        checksum += float(sparse.values.sum()) + float(sparse.indices.sum())
    return times, k_hats, checksum


def bench_cell(name: str, grad: np.ndarray, delta: float, spec: BenchSpec):
    comp = make_compressor(name, delta, seed=spec.seed)
    times, k_hats, checksum = time_calls(comp, grad, spec.repetitions, spec.warmup)
    return times, k_hats, checksum


def bench_run(spec: BenchSpec, progress=None) -> list[BenchRow]:
    """Benchmark every compressor on every (size, ratio) cell.

    Exact top-k is always measured since speedups are relative to it.
    """
    names = ["topk"] + [c for c in spec.compressors if c != "topk"]
    rows: list[BenchRow] = []
    for size in spec.all_sizes:
        grad = synthetic_tensor(size, spec.law, spec.seed, spec.power)
        for delta in spec.ratios:
            medians = {}
            for name in names:
                times, k_hats, checksum = bench_cell(name, grad, delta, spec)
                med = int(np.median(times))
                medians[name] = med
                row = BenchRow(
                    compressor=name,
                    size=size,
                    delta=delta,
                    median_ns=med,
                    p10_ns=int(np.percentile(times, 10)),
                    p90_ns=int(np.percentile(times, 90)),
                    speedup_vs_topk=medians["topk"] / med if med else float("inf"),
                    k_hat_mean=float(k_hats.mean()),
                    checksum=checksum,
                )
                if name in spec.compressors:
                    rows.append(row)
                if progress:
                    progress(row)
        del grad
    return rows


def write_csv(rows, path) -> None:
    """Write the bench table plus a ``<path>.meta.json`` sidecar naming the top-k algorithm."""
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([r.compressor, r.size, repr(r.delta), r.median_ns, r.p10_ns, r.p90_ns,
                        f"{r.speedup_vs_topk:.6f}", f"{r.k_hat_mean:.3f}"])
    meta = {"topk_algorithm": TOPK_ALGORITHM, "clock": "time.perf_counter_ns", "statistic": "median",
            "device": "cpu", "columns": list(CSV_COLUMNS)}
    path.with_name(path.name + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n")
