"""Time the batched LR kernels: numba versus the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--rows 200] [--n 100] [--restarts 0]

Both backends see identical permuted datasets; the script also reports the
largest absolute difference between their statistics.
"""

import argparse
import time

import numpy as np

from semimix.distributions import nb_log_constant
from semimix.kernels import _numba, _numpy


def gaussian_batch(rng, rows, n, u, restarts):
    y = np.r_[rng.normal(0, 1, n - 5), rng.normal(3, 1, 5)]
    Y = np.tile(y, (rows, 1))
    X = np.zeros((rows, n), dtype=np.bool_)
    for r in range(rows):
        X[r, rng.permutation(n)[:u]] = True
    U = rng.random((rows, restarts, u))
    return Y, X, U


def count_batch(rng, rows, n, u, restarts, phi=0.2, mu=10.0):
    r = 1.0 / phi
    y = rng.negative_binomial(r, r / (r + mu), size=n).astype(float)
    Y = np.tile(y, (rows, 1))
    O = np.ones_like(Y)
    C = nb_log_constant(Y, phi)
    X = np.zeros((rows, n), dtype=np.bool_)
    for k in range(rows):
        X[k, rng.permutation(n)[:u]] = True
    U = rng.random((rows, restarts, u))
    return Y, O, C, X, U, r


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--rows", type=int, default=200)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--restarts", type=int, default=0)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    u = args.n // 2
    tol, max_iter = 1e-8, 500

    Y, X, U = gaussian_batch(rng, args.rows, args.n, u, args.restarts)
    Yc, O, C, Xc, Uc, r = count_batch(rng, args.rows, args.n, u, args.restarts)
    cases = {
        "gaussian": lambda m: m.lr_batch_gaussian(Y, X, U, 1.0, 0.0, tol, max_iter),
        "negbin": lambda m: m.lr_batch_count(Yc, O, C, Xc, Uc, r, 0.0, tol, max_iter),
    }
    print(f"rows={args.rows} n={args.n} restarts={args.restarts}")
    print(f"{'kernel':<10}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max |dT|':>12}")
    for name, call in cases.items():
        call(_numba)  # compile
        t_nb, (s_nb, _) = best_of(lambda call=call: call(_numba), args.repeat)
        t_np, (s_np, _) = best_of(lambda call=call: call(_numpy), args.repeat)
        diff = float(np.nanmax(np.abs(s_nb - s_np)))
        print(f"{name:<10}{1e3 * t_nb:>12.1f}{1e3 * t_np:>12.1f}{t_np / t_nb:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
