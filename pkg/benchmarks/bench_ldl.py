"""Compare the compiled and numpy band LDL^T kernels on local-solver sized systems.

Usage: python3 benchmarks/bench_ldl.py [--sizes 30,60,90] [--repeat 3]

Each size ``n`` factors and solves with the stiffness of an ``n x n`` element
oversampling domain (1e4 contrast inclusions, Dirichlet on the outer ring),
which is what one local solve does at scale.
"""

import argparse
import time

import numpy as np

from msgfem import grid
from msgfem.assembly import assemble_stiffness
from msgfem.factor import KERNELS, BandLDL


def local_matrix(n):
    mesh = grid.build_mesh(n, n)
    coeff = grid.builtin_coefficient("inclusions", mesh, seed=1)
    K = assemble_stiffness(mesh, coeff).tocsr()
    I, J = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    inner = ((I > 0) & (I < n) & (J > 0) & (J < n)).ravel()
    idx = np.flatnonzero(inner)
    return K[idx][:, idx]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="30,60,90")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--rhs", type=int, default=13, help="right-hand sides per solve")
    args = ap.parse_args(argv)

    backends = sorted(KERNELS)
    print(f"backends: {', '.join(backends)}")
    print(f"{'n':>4} {'dofs':>7} {'bw':>4} {'backend':>8} {'factor_s':>10} {'solve_s':>10} {'resid':>9}")
    rng = np.random.default_rng(0)
    for n in (int(s) for s in args.sizes.split(",")):
        A = local_matrix(n)
        B = rng.standard_normal((A.shape[0], args.rhs))
        base = {}
        for name in backends:
            tf, F = best_of(lambda: BandLDL(A, backend=name), args.repeat)
            ts, X = best_of(lambda: F.solve(B), args.repeat)
            res = np.linalg.norm(A @ X - B) / np.linalg.norm(B)
            base[name] = (tf, ts)
            print(f"{n:>4} {A.shape[0]:>7} {F.bw:>4} {name:>8} {tf:>10.4f} {ts:>10.4f} {res:>9.1e}")
        if "cython" in base:
            (pf, ps), (cf, cs) = base["python"], base["cython"]
            print(f"{'':>4} speedup factor x{pf / cf:.1f}, solve x{ps / cs:.1f}")


if __name__ == "__main__":
    main()
