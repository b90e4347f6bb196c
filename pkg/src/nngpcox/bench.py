"""Wall-clock scaling harness for the latent block.

Times the neighbor-projected latent redraw (cost O(K M^3)) against the
exact dense redraw (cost O(K^3)) on synthetic states and fits the
log-log slope of time versus K.  Neighbor-graph construction is timed
separately for reporting; the timed latent block includes its own
neighbor search plus the conditional draws.
"""

from __future__ import annotations

import time

import numpy as np

from .gp_core import CovParams
from .mcmc import latent_slice_dense, latent_slice_nngp
from .nngp import symmetric_m_nearest

BENCH_KERNEL = CovParams(1.0, 2.0)


def _synthetic_state(K: int, rng: np.random.Generator):
    # density matched to the 10 x 10 unit-rate layout the sampler sees
    side = np.sqrt(K / 20.0) * np.sqrt(10.0)
    pts = rng.uniform(0.0, side, size=(K, 2))
    w = np.ones(K)
    w[rng.uniform(size=K) < 0.5] = -1.0
    z = rng.standard_normal(K)
    mu = np.zeros(K)
    return pts, w, z, mu


def _median_time(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def _fit_exponent(sizes, times) -> dict:
    slope, intercept = np.polyfit(np.log(sizes), np.log(times), 1)
    return {"sizes": list(sizes), "times_s": [float(t) for t in times],
            "exponent": float(slope), "log_intercept": float(intercept)}


def run_bench(sizes, m_list, dense_sizes, repeats: int = 5, seed: int = 0) -> dict:
    # warm the compiled kernels so timings exclude jit compilation
    wrng = np.random.default_rng(0)
    wpts, ww, wz, wmu = _synthetic_state(64, wrng)
    latent_slice_nngp(wpts, BENCH_KERNEL, ww, wz, wmu, wrng, 5)
    latent_slice_dense(wpts, BENCH_KERNEL, ww, wz, wmu, wrng)
    report = {"nngp": {}, "nngp_fit": {}, "graph_build_s": {}}
    for M in m_list:
        times = []
        gtimes = []
        for K in sizes:
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(M, K)))
            pts, w, z, mu = _synthetic_state(K, rng)
            t0 = time.perf_counter()
            symmetric_m_nearest(pts, M)
            gtimes.append(time.perf_counter() - t0)
            times.append(_median_time(
                lambda: latent_slice_nngp(pts, BENCH_KERNEL, w, z, mu, rng, M),
                repeats,
            ))
        report["nngp"][str(M)] = dict(zip(map(str, sizes), times))
        report["nngp_fit"][str(M)] = _fit_exponent(sizes, times)
        report["graph_build_s"][str(M)] = dict(zip(map(str, sizes), gtimes))
    dtimes = []
    for K in dense_sizes:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, K)))
        pts, w, z, mu = _synthetic_state(K, rng)
        dtimes.append(_median_time(
            lambda: latent_slice_dense(pts, BENCH_KERNEL, w, z, mu, rng),
            repeats,
        ))
    report["dense"] = dict(zip(map(str, dense_sizes), dtimes))
    report["dense_fit"] = _fit_exponent(dense_sizes, dtimes)
    return report
