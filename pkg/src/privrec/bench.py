"""Wall-clock benchmarks for the random transforms.

Times the per-publish cost of each transform - generating the random
matrices and applying them to a perturbed users-rows matrix - plus the bare
Hadamard kernel, at a range of item dimensions.  Medians over repetitions;
one JIT warm-up run is excluded from timing.
"""

from __future__ import annotations

import time

import numpy as np

from .fwht import fwht_rows_unnormalized
from .publish import _sjlt_user_rows, gaussian_jlt_matrix
from .rng import Stream

__all__ = ["time_transform", "time_fwht", "bench_table", "loglog_slope"]


def _median_time(fn, reps: int) -> float:
    fn()  # warm-up (JIT compilation, allocator)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def time_transform(
    kind: str,
    n1: int,
    n1_prime: int,
    m: int,
    q: float,
    seed: int = 0,
    reps: int = 5,
) -> float:
    """Median seconds for one generate+apply of the transform at these dims."""
    rows = Stream(seed).child("bench_matrix").generator().standard_normal((m, n1))
    stream = Stream(seed).child("bench", kind, n1)

    if kind == "jlt":

        def run():
            mat = gaussian_jlt_matrix(n1_prime, n1, stream)
            return rows @ mat.T

    elif kind == "sjlt":
        if n1 & (n1 - 1):
            raise ValueError(f"sjlt needs a power-of-two size, got {n1}")

        def run():
            return _sjlt_user_rows(rows, n1_prime, q, stream)

    else:
        raise ValueError(f"unknown transform {kind!r}")
    return _median_time(run, reps)


def time_fwht(n1: int, m: int, seed: int = 0, reps: int = 5) -> float:
    """Median seconds for the row-wise Hadamard kernel on an (m, n1) block."""
    if n1 & (n1 - 1):
        raise ValueError(f"fwht needs a power-of-two size, got {n1}")
    rows = Stream(seed).child("bench_matrix").generator().standard_normal((m, n1))

    def run():
        fwht_rows_unnormalized(rows.copy())

    return _median_time(run, reps)


def bench_table(
    kinds: list[str],
    sizes: list[int],
    n1_prime: int,
    m: int,
    q: float | None = None,
    seed: int = 0,
    reps: int = 5,
) -> list[dict]:
    """Rows of {transform, n1, n1_prime, m, q, seconds} for the CSV report.

    When `q` is not given the sparse transform runs in its intended sparse
    regime, q = 1/m.
    """
    if q is None:
        q = 1.0 / m
    rows = []
    for kind in kinds:
        for n1 in sizes:
            if kind == "fwht":
                seconds = time_fwht(n1, m, seed=seed, reps=reps)
            else:
                seconds = time_transform(
                    kind, n1, n1_prime, m, q, seed=seed, reps=reps
                )
            rows.append(
                {
                    "transform": kind,
                    "n1": n1,
                    "n1_prime": n1_prime,
                    "m": m,
                    "q": q,
                    "seconds": seconds,
                }
            )
    return rows


def loglog_slope(sizes, times) -> float:
    """Least-squares slope of log(time) against log(size)."""
    x = np.log(np.asarray(sizes, dtype=np.float64))
    y = np.log(np.asarray(times, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])
