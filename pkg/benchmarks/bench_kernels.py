"""Benchmark the compiled kernel backend against the numpy fallback.

Times the hot kernels on representative sizes and a full decomposed 2D
step end to end.  Run from the repository root:

    python benchmarks/bench_kernels.py

The compiled extension must be built (``python setup.py build_ext
--inplace`` or an editable install); the pure path is always available.
"""

import time

import numpy as np

from mixflow._kernels import pure

try:
    from mixflow._kernels import _core as compiled
except ImportError:
    compiled = None


def best_of(fn, repeats=7):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels():
    rng = np.random.default_rng(0)
    rows = []

    n = 4096
    dl = -rng.uniform(0.1, 1.0, n)
    du = -rng.uniform(0.1, 1.0, n)
    d = rng.uniform(0.1, 1.0, n) + 2.5
    b = rng.standard_normal(n)
    rows.append(("thomas_solve n=4096",
                 best_of(lambda: pure.thomas_solve(dl, d, du, b)),
                 best_of(lambda: compiled.thomas_solve(dl, d, du, b)) if compiled else None))

    x = rng.standard_normal((256, 256))
    diag = rng.uniform(0.5, 2.0, (256, 256))
    bc = np.array([0, 0, 1, 1], dtype=np.int32)
    rows.append(("matvec_2d 256x256",
                 best_of(lambda: pure.matvec_2d(x, diag, 0.3, 256.0**2, 256.0**2, bc)),
                 best_of(lambda: compiled.matvec_2d(x, diag, 0.3, 256.0**2, 256.0**2, bc))
                 if compiled else None))

    vals = rng.standard_normal((4, 128, 128))
    qx = rng.uniform(0, 1, 128 * 128)
    qy = rng.uniform(0, 1, 128 * 128)
    modes = np.zeros(4, dtype=np.int32)
    rows.append(("sample_2d 4sp 128^2 pts",
                 best_of(lambda: pure.sample_2d(vals, qx, qy, 0, 1 / 128, 128, 0, 1 / 128, 128, modes)),
                 best_of(lambda: compiled.sample_2d(vals, qx, qy, 0, 1 / 128, 128, 0, 1 / 128, 128, modes))
                 if compiled else None))

    nx = 512
    vx0 = 0.5 * rng.standard_normal(nx + 1)
    vx1 = 0.5 * rng.standard_normal(nx + 1)
    xq = rng.uniform(0, 1, nx)
    m1 = np.zeros(2, dtype=np.int32)
    rows.append(("backtrace_1d n=512 sub=4",
                 best_of(lambda: pure.backtrace_1d(vx0, vx1, xq, 1, 0, 0.01, 4, 2, 0, 1 / nx, nx, m1)),
                 best_of(lambda: compiled.backtrace_1d(vx0, vx1, xq, 1, 0, 0.01, 4, 2, 0, 1 / nx, nx, m1))
                 if compiled else None))

    gx, gy = 128, 128
    vx0b = 0.4 * rng.standard_normal((gx + 1, gy))
    vx1b = 0.4 * rng.standard_normal((gx + 1, gy))
    vy0b = 0.4 * rng.standard_normal((gx, gy + 1))
    vy1b = 0.4 * rng.standard_normal((gx, gy + 1))
    xq2 = rng.uniform(0, 1, gx * gy)
    yq2 = rng.uniform(0, 1, gx * gy)
    m2 = np.zeros(4, dtype=np.int32)
    rows.append(("backtrace_2d 128^2 sub=4",
                 best_of(lambda: pure.backtrace_2d(vx0b, vx1b, vy0b, vy1b, xq2, yq2, 1, 0,
                                                   0.01, 4, 2, 0, 1 / gx, gx, 0, 1 / gy, gy, m2)),
                 best_of(lambda: compiled.backtrace_2d(vx0b, vx1b, vy0b, vy1b, xq2, yq2, 1, 0,
                                                       0.01, 4, 2, 0, 1 / gx, gx, 0, 1 / gy, gy, m2))
                 if compiled else None))
    return rows


def bench_full_step():
    """One decomposed step on a 96x96 grid under each backend."""
    import os
    import subprocess
    import sys

    code = r"""
import time
import numpy as np
from mixflow._kernels import backend_name
from mixflow.coupled import CoupledProblem, init_decomposition, step_decomposed
from mixflow.grid import SpeciesField, StructuredGrid
from mixflow.mixture import LinearCombination, MixtureModel, PowerLaw, SpeciesSet

g = StructuredGrid((96, 96), (1.0, 1.0))
model = MixtureModel(SpeciesSet((1.0, 1.0)), PowerLaw(1.0, 1.0), LinearCombination((1.0, 1.0)))
c = g.cell_centers()
w = 1.5 + 0.5 * np.exp(-((c[:, 0] - 0.4) ** 2 + (c[:, 1] - 0.5) ** 2) / 0.02).reshape(96, 96)
u1 = (c[:, 0] < 0.5).astype(float).reshape(96, 96)
rho0 = SpeciesField(g, np.stack([w * u1, w * (1 - u1)]))
problem = CoupledProblem(grid=g, model=model)
st = init_decomposition(rho0, model)
st = step_decomposed(st, 0.002, problem)  # warm up
best = np.inf
for _ in range(5):
    t0 = time.perf_counter()
    step_decomposed(st, 0.002, problem)
    best = min(best, time.perf_counter() - t0)
print(f"{backend_name()} {best:.6f}")
"""
    out = {}
    for env_val in ("0", "1"):
        env = dict(os.environ, MIXFLOW_PURE=env_val)
        res = subprocess.run([sys.executable, "-c", code], capture_output=True,
                             text=True, env=env)
        if res.returncode == 0:
            name, t = res.stdout.split()
            out[name] = float(t)
    return out


def main():
    print(f"{'kernel':28s} {'pure [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>9s}")
    for name, tp, tc in bench_kernels():
        if tc is None:
            print(f"{name:28s} {tp * 1e3:12.3f} {'n/a':>14s} {'':>9s}")
        else:
            print(f"{name:28s} {tp * 1e3:12.3f} {tc * 1e3:14.3f} {tp / tc:8.1f}x")
    full = bench_full_step()
    if full:
        print()
        for name, t in sorted(full.items()):
            print(f"decomposed 2D step (96x96), {name:9s} backend: {t * 1e3:9.3f} ms")
        if "pure" in full and "compiled" in full:
            print(f"end-to-end speedup: {full['pure'] / full['compiled']:.2f}x")


if __name__ == "__main__":
    main()
