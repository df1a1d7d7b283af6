"""CSV and legacy-VTK output.

CSV is the primary format: one diagnostics file per run (a row per
accepted step) and one field snapshot per scheduled output.  All numbers
are written with 17 significant digits so the files round-trip float64
exactly and reruns of the same configuration are byte-identical.
"""

from __future__ import annotations

import os

import numpy as np

from .coupled import DiagnosticsLog, MixtureState


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


def diagnostics_header(n_species: int) -> list[str]:
    cols = ["t", "dt"]
    cols += [f"mass_{i + 1}" for i in range(n_species)]
    cols += [
        "free_energy",
        "dissipation",
        "min_w",
        "max_w",
        "max_lambda_u_dev",
        "newton_iters",
        "picard_iters",
    ]
    return cols


def write_diagnostics_csv(path: str, log: DiagnosticsLog, n_species: int) -> None:
    lines = [",".join(diagnostics_header(n_species))]
    for r in log.records:
        row = [_fmt(r.t), _fmt(r.dt)]
        row += [_fmt(m) for m in r.masses]
        row += [
            _fmt(r.free_energy),
            _fmt(r.dissipation),
            _fmt(r.min_w),
            _fmt(r.max_w),
            _fmt(r.max_lambda_dev),
            str(r.newton_iters),
            str(r.picard_iters),
        ]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def fields_header(dim: int, n_species: int) -> list[str]:
    cols = ["index", "x"] + (["y"] if dim == 2 else [])
    cols += ["w", "p"]
    cols += [f"rho_{i + 1}" for i in range(n_species)]
    cols += [f"u_{i + 1}" for i in range(n_species)]
    return cols


def write_fields_csv(path: str, state: MixtureState) -> None:
    g = state.grid
    n = state.rho.n_species
    centers = g.cell_centers()
    w = state.w.values.ravel()
    p = state.pressure.values.ravel()
    rho = state.rho.values.reshape(n, -1)
    u = state.u.values.reshape(n, -1)
    lines = [",".join(fields_header(g.dim, n))]
    for c in range(g.n_cells):
        row = [str(c)] + [_fmt(x) for x in centers[c]]
        row += [_fmt(w[c]), _fmt(p[c])]
        row += [_fmt(rho[i, c]) for i in range(n)]
        row += [_fmt(u[i, c]) for i in range(n)]
        lines.append(",".join(row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def snapshot_name(step: int) -> str:
    return f"fields_{step:06d}.csv"


def write_vtk(path: str, state: MixtureState) -> None:
    """Legacy ASCII structured-points file with cell data."""
    g = state.grid
    n = state.rho.n_species
    nx = g.shape[0]
    ny = g.shape[1] if g.dim == 2 else 1
    hx = g.spacing[0]
    hy = g.spacing[1] if g.dim == 2 else 1.0
    oy = g.origin[1] if g.dim == 2 else 0.0
    lines = [
        "# vtk DataFile Version 3.0",
        "mixflow snapshot",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {nx + 1} {ny + 1} 1",
        f"ORIGIN {_fmt(g.origin[0])} {_fmt(oy)} 0",
        f"SPACING {_fmt(hx)} {_fmt(hy)} 1",
        f"CELL_DATA {nx * ny}",
    ]

    def add_scalar(name, vals):
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        # VTK expects x fastest; our arrays are (nx[, ny]) C-order
        arr = vals if g.dim == 1 else vals.T
        lines.extend(_fmt(v) for v in np.ravel(arr))

    add_scalar("w", state.w.values)
    add_scalar("p", state.pressure.values)
    for i in range(n):
        add_scalar(f"rho_{i + 1}", state.rho.values[i])
        add_scalar(f"u_{i + 1}", state.u.values[i])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path
