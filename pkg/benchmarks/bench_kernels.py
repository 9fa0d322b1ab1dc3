"""Compare the compiled and NumPy backward sweeps on the built-in models.

    python benchmarks/bench_kernels.py [--repeat 5] [--rows 1 81]
"""
import argparse
import timeit

import numpy as np

from glevy import _backend, _kernels_py
from glevy.config import RunConfig
from glevy.pide import JumpTables, prepare_terminal


def cases(rows_list):
    for name in ("quadratic", "jump", "two-measure"):
        rc = RunConfig.load(f"builtin:{name}")
        U, g, phi = rc.model(), rc.grid(), rc.terminal()
        nt, dt = g.steps(U)
        tables = JumpTables.build(g, U)
        base = prepare_terminal(phi, g)(g.x)
        W = np.ascontiguousarray(U.weights if not U.jump_free else np.zeros((0, 0)))
        for rows in rows_list:
            u_T = np.ascontiguousarray(np.tile(base, (rows, 1)))
            args = (u_T, nt, dt, g.dx, 0.5 * U.grams[:, 0, 0], tables.idx, tables.w0, tables.w1,
                    W, False)
            yield f"{name} nx={g.nx} nt={nt} rows={rows}", args


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--rows", type=int, nargs="+", default=[1, 81])
    args = ap.parse_args(argv)
    if _backend.BACKEND != "cython":
        print("compiled kernel not available; only the NumPy sweep can be timed")
    print(f"{'case':44s} {'numpy s':>10s} {'cython s':>10s} {'speed-up':>9s} {'max diff':>9s}")
    for label, a in cases(args.rows):
        t_py = min(timeit.repeat(lambda: _kernels_py.backward_sweep(*a), number=1, repeat=args.repeat))
        if _backend.BACKEND == "cython":
            t_cy = min(timeit.repeat(lambda: _backend.backward_sweep(*a), number=1, repeat=args.repeat))
            diff = float(np.max(np.abs(_backend.backward_sweep(*a) - _kernels_py.backward_sweep(*a))))
            print(f"{label:44s} {t_py:10.4f} {t_cy:10.4f} {t_py / t_cy:9.1f} {diff:9.1e}")
        else:
            print(f"{label:44s} {t_py:10.4f} {'-':>10s} {'-':>9s} {'-':>9s}")


if __name__ == "__main__":
    main()
