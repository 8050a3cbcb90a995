"""
Compare the compiled and numpy kernels on the two hot loops.

    python benchmarks/bench_kernels.py --N 400 --steps 1000
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mfsac import mf_solver as mf
from mfsac.kernels import get_backend
from mfsac.simulation import _advance


def _population(N: int, n: int, L: int, seed: int):
    rng = np.random.default_rng(seed)
    A = np.tile(np.array([[0.2, 0.1], [0.0, 0.2]])[:n, :n], (N, 1, 1))
    B = np.tile(np.eye(n), (N, 1, 1))
    K = np.tile(2.0 * np.eye(n), (N, 1, 1))
    v = 0.1 * rng.standard_normal((N, L, n))
    noise = 0.01 * rng.standard_normal((N, L, n))
    x0 = rng.standard_normal((N, n))
    coupling = mf.CouplingSpec(0.4 * np.eye(n), np.zeros(n), np.ones(n))
    return x0, A, B, K, v, noise, coupling


def time_advance(backend, N, n, L, repeat, seed=0):
    x0, A, B, K, v, noise, coupling = _population(N, n, L, seed)
    best = np.inf
    for _ in range(repeat):
        x = x0.copy()
        args = (x, A, B, K, v, noise, coupling, None, np.zeros((L, n)), np.tile(np.eye(n), (N, 1, 1)), np.eye(n), 1e-3, 0,
                np.zeros(N), np.zeros(N), np.zeros(N))
        t0 = time.perf_counter()
        _advance(*args, backend=backend)
        best = min(best, time.perf_counter() - t0)
    return best, x


def time_recurrence(backend, K, L, n, repeat, seed=0):
    rng = np.random.default_rng(seed)
    Phi = np.tile(0.99 * np.eye(n), (K, 1, 1))
    c = rng.standard_normal((K, L, n))
    y0 = np.zeros((K, n))
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        y = backend.linear_recurrence(Phi, c, y0)
        best = min(best, time.perf_counter() - t0)
    return best, y


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--N", type=int, default=400)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)

    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        print("compiled kernels not built; only the numpy backend is available")
        cy = None

    rows = []
    t_py, x_py = time_advance(py, args.N, args.n, args.steps, args.repeat)
    row = ["advance_block", f"N={args.N} steps={args.steps}", t_py]
    if cy is not None:
        t_cy, x_cy = time_advance(cy, args.N, args.n, args.steps, args.repeat)
        row += [t_cy, float(np.max(np.abs(x_py - x_cy)))]
    rows.append(row)

    K, L = 3, 20 * args.steps
    t_py, y_py = time_recurrence(py, K, L, args.n, args.repeat)
    row = ["linear_recurrence", f"K={K} L={L}", t_py]
    if cy is not None:
        t_cy, y_cy = time_recurrence(cy, K, L, args.n, args.repeat)
        row += [t_cy, float(np.max(np.abs(y_py - y_cy)))]
    rows.append(row)

    print(f"{'kernel':<18} {'workload':<22} {'numpy [s]':>10} {'cython [s]':>11} {'speedup':>8} {'max diff':>9}")
    for r in rows:
        if len(r) == 3:
            print(f"{r[0]:<18} {r[1]:<22} {r[2]:>10.4f}")
        else:
            print(f"{r[0]:<18} {r[1]:<22} {r[2]:>10.4f} {r[3]:>11.4f} {r[2] / r[3]:>7.1f}x {r[4]:>9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
