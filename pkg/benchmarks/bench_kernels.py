#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallback.

Times one warmed-up run of each hot kernel on a representative workload and
prints the speedup. Compilation happens during warmup and is excluded.

    python benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import time

import numpy as np

import sparselogit as sl
from sparselogit import kernels, risk
from sparselogit.kernels import numpy_kernels, record_steps
from sparselogit.model import RngStream
from sparselogit.posterior import TangentChart


def bench(fn, args, repeat):
    fn(*args)  # warmup / compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def workloads():
    rng = RngStream(1)
    w = sl.sample_target(50, 5, rng.child(0))
    D = sl.sample_dataset(w, 1000, rng.child(1))
    val = sl.sample_dataset(w, 1000, rng.child(2))
    Z = np.asarray(D.signed)
    Zv = np.asarray(val.signed)
    rec = record_steps(2000)
    u0 = np.full(50, 50 ** -0.5)
    gx, gw = risk.hermgauss(64)
    drift = np.zeros(50)
    drift[w.support] = w.values * risk.a_of_norm(1.0)
    chart = TangentChart.at(w)
    basis = np.ascontiguousarray(chart.basis)
    return [
        ("flow_single (2000 RK4 steps, n=1000, d=50)", "flow_single",
         (Z, Zv, np.zeros(50), 1e-2, 2000, rec)),
        ("flow_spindly (2000 RK4 steps)", "flow_spindly",
         (Z, Zv, u0, u0, 1e-2, 2000, rec)),
        ("gd_spindly (2000 steps)", "gd_spindly",
         (Z, Zv, u0, u0, 0.1, 2000, rec)),
        ("riccati_rk4 (3500 steps, 64-node quadrature)", "riccati_rk4",
         (drift, np.full(50, 0.02), gx, gw, 1e-2, 3500, rec)),
        ("mcmc_chain (20000 steps, n=1000, d=50)", "mcmc_chain",
         (Z, chart.w_star, basis, 50, 20000, 4000, 4, 0.05, 0.3)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if kernels.numba_kernels is None:
        raise SystemExit("numba backend unavailable; nothing to compare")
    print(f"{'kernel':52s} {'numpy':>9s} {'numba':>9s} {'speedup':>8s}")
    for label, name, wargs in workloads():
        if name == "mcmc_chain":
            t_np = bench(getattr(numpy_kernels, name),
                         (*wargs, RngStream(9).generator()), args.repeat)
            t_nb = bench(getattr(kernels.numba_kernels, name),
                         (*wargs, RngStream(9).generator()), args.repeat)
        else:
            t_np = bench(getattr(numpy_kernels, name), wargs, args.repeat)
            t_nb = bench(getattr(kernels.numba_kernels, name), wargs, args.repeat)
        print(f"{label:52s} {t_np:8.3f}s {t_nb:8.3f}s {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
