"""Compiled vs NumPy kernels: agreement and wall time on typical sizes.

Run with ``python3 benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import timeit

import numpy as np

from gwpk.kernels import get_backend


def cases(rng):
    n_pts = 4096
    lat = np.linspace(-12, 12, 64)
    X, Y = np.meshgrid(lat, lat, indexing="ij")
    qx, qy = X.ravel(), Y.ravel()
    centers = rng.choice(n_pts, 600, replace=False)
    n = 512
    nnz = 200_000
    rows = rng.integers(0, n_pts, nnz)
    cols = rng.integers(0, n_pts, nnz)
    vals = rng.normal(size=nnz) + 1j * rng.normal(size=nnz)
    vec = rng.normal(size=n_pts) + 1j * rng.normal(size=n_pts)
    table = rng.normal(size=(2 * n - 1, n)) + 1j * rng.normal(size=(2 * n - 1, n))
    phase = rng.uniform(-50, 50, size=(n, 256))
    sigma = np.ones((n, 256), dtype=complex)
    fhat = rng.normal(size=256) + 1j * rng.normal(size=256)
    return {
        "neighborhood_hits": lambda k: k.neighborhood_hits(qx, qy, qx[centers], qy[centers], 0.2),
        "coo_matvec": lambda k: k.coo_matvec(rows, cols, vals, vec, n_pts),
        "weyl_gather": lambda k: k.weyl_gather(table, 0.1),
        "fio_sum": lambda k: k.fio_sum(phase, sigma, fhat, 0.05),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    py = get_backend("python")
    try:
        cy = get_backend("cython")
    except ImportError:
        print("compiled kernels are not built; only the NumPy backend is available")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases(rng).items():
        a, b = fn(py), fn(cy)
        diff = float(np.max(np.abs(np.asarray(a, dtype=complex) - np.asarray(b, dtype=complex))))
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        t_cy = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<20}{t_py:>14.2f}{t_cy:>14.2f}{t_py / t_cy:>10.2f}{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
