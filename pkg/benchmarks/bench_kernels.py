"""Compare compiled and pure-numpy GEV kernels.

Usage::

    python benchmarks/bench_kernels.py [--sites 86] [--years 49] [--repeat 7]

Times each kernel on one synthetic dataset with both backends, checks that
the two agree, and reports a short split-sampler run per backend.
"""
from __future__ import annotations

import argparse
import time
import timeit

import numpy as np

from splitgev import kernels
from splitgev.gevdist import GevParams, gev_sample
from splitgev.simulate import simulate
from splitgev.splitsampler import SamplerConfig, run_chains


def dataset(n_sites, n_years, seed=0):
    rng = np.random.default_rng(seed)
    mu = rng.normal(40.0, 5.0, n_sites)
    tau = rng.normal(2.0, 0.3, n_sites)
    xi = 0.1
    ys = [gev_sample(GevParams(m, t, xi), n_years, rng) for m, t in zip(mu, tau)]
    offsets = np.r_[0, np.cumsum([len(y) for y in ys])]
    return np.concatenate(ys), offsets, mu, tau, xi


def time_kernel(fn, args, repeat):
    number = 200
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat))
    return best / number * 1e6


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--sites", type=int, default=86)
    ap.add_argument("--years", type=int, default=49)
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--iters", type=int, default=300, help="sampler iterations per backend")
    args = ap.parse_args(argv)

    try:
        kernels.use_backend("cython")
    except ImportError:
        print("compiled kernels are not built; only the numpy backend is available")
        backends = ["python"]
    else:
        backends = ["python", "cython"]

    data = dataset(args.sites, args.years)
    names = ["logpdf", "site_loglik", "site_derivs", "xi_derivs"]
    calls = {
        "logpdf": (kernels.logpdf, lambda y, o, m, t, x: (y, np.repeat(m, np.diff(o)), np.repeat(t, np.diff(o)), x)),
        "site_loglik": (kernels.site_loglik, lambda *a: a),
        "site_derivs": (kernels.site_derivs, lambda *a: a),
        "xi_derivs": (kernels.xi_derivs, lambda *a: a),
    }
    timings = {}
    results = {}
    for b in backends:
        kernels.use_backend(b)
        for nm in names:
            fn, prep = calls[nm]
            a = prep(*data)
            timings[(b, nm)] = time_kernel(fn, a, args.repeat)
            results[(b, nm)] = fn(*a)

    print(f"kernels on {args.sites} sites x {args.years} years (microseconds per call, best of {args.repeat})")
    print(f"{'kernel':<12}" + "".join(f"{b:>12}" for b in backends) + ("    speedup" if len(backends) == 2 else ""))
    for nm in names:
        row = f"{nm:<12}" + "".join(f"{timings[(b, nm)]:>12.1f}" for b in backends)
        if len(backends) == 2:
            row += f"{timings[('python', nm)] / timings[('cython', nm)]:>10.1f}x"
        print(row)

    if len(backends) == 2:
        worst = 0.0
        for nm in names:
            pa, ca = results[("python", nm)], results[("cython", nm)]
            pa = pa if isinstance(pa, tuple) else (pa,)
            ca = ca if isinstance(ca, tuple) else (ca,)
            for p, c in zip(pa, ca):
                p, c = np.asarray(p, dtype=float), np.asarray(c, dtype=float)
                worst = max(worst, float(np.max(np.abs(p - c) / np.maximum(1.0, np.abs(p)))))
        print(f"max relative difference between backends: {worst:.2e}")

    sim = simulate(20, 50, seed=0)
    cfg = SamplerConfig(n_iter=args.iters, n_chains=1, seed=0)
    print(f"\nsplit sampler, 20 sites x 50 years, {sim.model.n} mesh nodes, {args.iters} iterations")
    for b in backends:
        kernels.use_backend(b)
        t0 = time.perf_counter()
        run_chains(cfg, sim.model)
        dt = time.perf_counter() - t0
        print(f"{b:<12}{dt:>8.2f} s  ({1e3 * dt / args.iters:.2f} ms/iteration)")


if __name__ == "__main__":
    main()
