"""Numba vs numpy kernel timings.

Each backend runs in its own interpreter, because the backend is fixed at
import time by NCRB_DISABLE_JIT. The numba column excludes compilation: every
case runs once as warm-up before it is timed.

    python3 benchmarks/bench_backends.py [--repeat 3] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def cases():
    from ncrb.decoders import build_tree
    from ncrb.decoders.spline import bspline_design, bspline_eval, clamped_uniform_knots
    from ncrb.fem import DesignSet, assemble_affine
    from ncrb.geometry import FinShape, build_fin_mesh
    from ncrb.linalg import cg_solve, cholesky, residual, sym_eigen_desc
    from ncrb.pod import ReducedOperator
    from ncrb.rb import solve_rb_batch

    rng = np.random.default_rng(0)
    op = assemble_affine(build_fin_mesh(FinShape(n_fins=4, refinement=4)))
    design = DesignSet.default(4, 5)
    mu = design.midpoint()
    A = op.matrix(mu)
    x = rng.standard_normal(op.n)

    B = rng.standard_normal((60, 60))
    spd = B @ B.T + 60 * np.eye(60)
    sym = 0.5 * (B + B.T)

    N = 40
    W = rng.standard_normal((6, N, N))
    red = ReducedOperator(np.einsum("qij,qkj->qik", W, W) + N * np.eye(N), rng.standard_normal(N), {})
    mus = design.from_unit(rng.random((2000, design.P)))

    knots = clamped_uniform_knots(100, 10)
    xs = rng.uniform(-1, 1, 20000)
    coef = rng.standard_normal((len(knots) - 11, 8))

    X = rng.random((100_000, 2))
    Y = np.column_stack([np.sin(4 * X[:, 0]) * X[:, 1], X[:, 0] ** 2])
    tree = build_tree(X, Y)

    return {
        "csr residual (n=2705)": lambda: residual(A.indptr, A.indices, A.data, x, op.f),
        "cg truth solve (n=2705)": lambda: cg_solve(A, op.f, tol=1e-12),
        "cholesky 60x60": lambda: cholesky(spd),
        "jacobi eigen 60x60": lambda: sym_eigen_desc(sym),
        "rb batch N=40 x2000": lambda: solve_rb_batch(red, mus),
        "bspline design 20000x100": lambda: bspline_design(knots, 10, xs),
        "bspline eval 20000": lambda: bspline_eval(knots, 10, coef, xs),
        "tree build 1e5": lambda: build_tree(X, Y),
        "tree predict 1e5": lambda: tree.predict(X),
    }


def worker(repeat):
    from ncrb import backend_name

    out = {}
    for name, fn in cases().items():
        fn()
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out[name] = best
    print(json.dumps({"backend": backend_name(), "seconds": out}))


def run_backend(disable_jit, repeat):
    env = dict(os.environ, NCRB_DISABLE_JIT="1" if disable_jit else "0")
    res = subprocess.run(
        [sys.executable, __file__, "--worker", "--repeat", str(repeat)],
        env=env, capture_output=True, text=True,
    )
    if res.returncode:
        sys.exit(res.stderr)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", default=None)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        worker(args.repeat)
        return
    jit = run_backend(False, args.repeat)
    ref = run_backend(True, args.repeat)
    print(f"{'case':28s} {'numba [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>8s}")
    for name, t_jit in jit["seconds"].items():
        t_np = ref["seconds"][name]
        print(f"{name:28s} {1e3 * t_jit:12.3f} {1e3 * t_np:12.3f} {t_np / t_jit:8.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": jit, "numpy": ref}, fh, indent=1)


if __name__ == "__main__":
    main()
