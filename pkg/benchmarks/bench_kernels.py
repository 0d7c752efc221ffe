"""Time the numba and numpy kernel backends side by side.

Both backends are called explicitly, so one process is enough.  Each
kernel is checked for agreement before it is timed.  The first numba
call includes compilation and is reported separately.

    python3 benchmarks/bench_kernels.py [--particles 2000] [--repeat 20]
"""
import argparse
import time

import numpy as np

from gmmsteer import _accel
from gmmsteer.dynamics import SUN_MU


def _workload(particles, bridges, seed):
    rng = np.random.default_rng(seed)
    n = 4
    X = rng.normal(size=(particles, n)) * [0.3, 0.3, 0.003, 0.003] + [-0.9, -0.3, 0.006, -0.016]
    means = X[rng.integers(0, particles, bridges)] + rng.normal(scale=0.01, size=(bridges, n))
    sd = np.diag([0.1, 0.1, 1e-3, 1e-3])
    whiten = np.empty((bridges, n, n))
    for b in range(bridges):
        G = rng.normal(size=(n, n))
        S = sd @ (G @ G.T + n * np.eye(n)) @ sd
        whiten[b] = np.linalg.inv(np.linalg.cholesky(S))
    log_coef = np.log(np.full(bridges, 1.0 / bridges)) + np.log(np.abs(np.linalg.det(whiten)))
    return X, means, whiten, log_coef


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=2000)
    ap.add_argument("--bridges", type=int, default=6)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _accel.HAVE_NUMBA:
        raise SystemExit("numba is not available; nothing to compare")

    X, means, whiten, log_coef = _workload(args.particles, args.bridges, args.seed)
    kernels = {
        "posterior_weights": lambda b: _accel.posterior_weights(X, means, whiten, log_coef, backend=b)[0],
        "two_body_drift": lambda b: _accel.two_body_drift(X, SUN_MU, backend=b),
        "two_body_jacobian": lambda b: _accel.two_body_jacobian(X, SUN_MU, backend=b),
    }
    print(f"{args.particles} points, {args.bridges} bridges, best of {args.repeat}")
    print(f"{'kernel':<20}{'compile s':>11}{'numpy ms':>11}{'numba ms':>11}{'speedup':>9}{'max rel diff':>14}")
    for name, fn in kernels.items():
        t0 = time.perf_counter()
        got = fn("numba")
        compile_s = time.perf_counter() - t0
        ref = fn("numpy")
        scale = np.maximum(np.abs(ref), 1e-300)
        diff = float(np.max(np.abs(got - ref) / np.where(np.abs(ref) > 0, scale, 1.0)))
        t_np = _time(lambda: fn("numpy"), args.repeat)
        t_nb = _time(lambda: fn("numba"), args.repeat)
        print(f"{name:<20}{compile_s:>11.3f}{1e3 * t_np:>11.3f}{1e3 * t_nb:>11.3f}{t_np / t_nb:>9.2f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
