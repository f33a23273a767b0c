"""Time every kernel under the numba and numpy backends on identical inputs.

    python benchmarks/bench_backends.py [--repeat 20] [--B 256] [--L 16] [--n 8] [--K 100]

Prints one row per (kernel, backend) with the best-of-repeat time in ms and
the numpy/numba speedup, after checking both backends return the same
numbers. Each numba kernel is called once before timing so JIT compilation
is excluded.
"""
import argparse
import time

import numpy as np

from catgrad import kernels
from catgrad._accel import HAS_NUMBA


def make_inputs(B, L, n, K, seed=0):
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=(L, n))
    pi = np.exp(theta) / np.exp(theta).sum(axis=1, keepdims=True)
    idx = rng.integers(0, n, (B, L)).astype(np.int64)
    full_pi = np.ascontiguousarray(np.broadcast_to(pi, (B, L, n)))
    g = rng.normal(size=(B, L, n))
    return {
        "softmax_jvp": (g, full_pi),
        "reinmax_rows": (g, np.eye(n)[idx], full_pi, full_pi, 2.0, 0.5),
        "inverse_cdf": (pi, rng.random((B, L))),
        "gr_mc_rows": (g, theta, idx, rng.standard_exponential((B, L, K, n)), 1.0),
    }


def best_ms(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--B", type=int, default=256)
    ap.add_argument("--L", type=int, default=16)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--K", type=int, default=100, help="Monte-Carlo draws for gr_mc_rows")
    args = ap.parse_args(argv)
    if not HAS_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    inputs = make_inputs(args.B, args.L, args.n, args.K)
    print(f"B={args.B} L={args.L} n={args.n} K={args.K} repeat={args.repeat}")
    print(f"{'kernel':<14}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, call_args in inputs.items():
        np_fn = getattr(kernels.NUMPY, name)
        nb_fn = getattr(kernels.NUMBA, name)
        ref, got = np_fn(*call_args), nb_fn(*call_args)  # also compiles numba
        if not np.allclose(ref, got, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_np = best_ms(np_fn, call_args, args.repeat)
        t_nb = best_ms(nb_fn, call_args, args.repeat)
        print(f"{name:<14}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
