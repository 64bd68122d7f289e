#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel runs once on both backends before timing (JIT warm-up) and the
outputs are compared, so a fast-but-wrong backend shows up as a mismatch.
"""
import argparse
import timeit

import numpy as np

from lossmix import kernels


def _fft_case(rows, n, rng):
    data = rng.normal(size=(rows, n)) + 1j * rng.normal(size=(rows, n))

    def run(impl):
        x = data.copy()
        kernels.fft_rows(x, impl=impl)
        return x

    return f"fft_rows {rows}x{n}", run


def _ppf_case(size, alpha, rng):
    u = rng.random(size)
    return f"sym_beta_ppf n={size} alpha={alpha}", lambda impl: kernels.sym_beta_ppf(alpha, u, impl=impl)


def _cdf_case(size, alpha, rng):
    x = rng.random(size)
    return f"sym_beta_cdf n={size} alpha={alpha}", lambda impl: kernels.sym_beta_cdf(alpha, x, impl=impl)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    cases = [_fft_case(124, 64, rng), _fft_case(16, 1024, rng),
             _ppf_case(8, 0.4, rng), _ppf_case(4096, 0.4, rng), _cdf_case(4096, 2.0, rng)]
    backends = {"numba": kernels.get_impl("numba"), "numpy": kernels.get_impl("numpy")}
    if not kernels._jit.HAVE_NUMBA:
        print("numba not importable; the 'numba' column runs plain Python loops")

    print(f"{'kernel':36s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for label, run in cases:
        outs = {name: run(impl) for name, impl in backends.items()}
        diff = float(np.max(np.abs(outs["numba"] - outs["numpy"])))
        best = {}
        for name, impl in backends.items():
            timer = timeit.Timer(lambda: run(impl))
            loops, _ = timer.autorange()
            best[name] = min(timer.repeat(args.repeat, loops)) / loops * 1e3
        print(f"{label:36s} {best['numba']:10.4f} {best['numpy']:10.4f} "
              f"{best['numpy'] / best['numba']:7.1f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
