"""Refinement studies against closed-form or mutual oracles.

Three studies are available to the ``converge`` command:

* ``barenblatt``: the 1D self-similar source solution of dw/dt = (c w^m)_xx
  with m = alpha + 1 and c = kappa c0 alpha / (alpha + 1), evolved by the
  implicit solver and compared in L1 at the final time (dt scaled with h,
  so the observed order is the scheme's first-order envelope).
* ``translation``: a Gaussian fraction profile advected by a constant
  velocity, compared against the exact shift.  dt is held fixed while h is
  refined, isolating the multilinear interpolation error (order ~2).
* ``oracle_compare``: the decomposed pipeline against the independent
  upwind cross-diffusion solver on the same initial data; the L1 gap at a
  fixed time must shrink under simultaneous refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupled import direct_cfl_limit, run
from .errors import ConfigError
from .grid import FaceVectorField, ScalarField, SpeciesField, StructuredGrid
from .mixture import ConstantKappa
from .parabolic import ParabolicProblem, ParabolicState, step_implicit
from .transport import FractionState, VelocitySampler, semi_lagrangian_step


def barenblatt_profile(x, t, m, C=1.0):
    """Self-similar source solution of dv/dt = (v^m)_xx in one dimension.

    v(x,t) = t^{-a} (C - k x^2 t^{-2a})_+^{1/(m-1)} with a = 1/(m+1) and
    k = (m-1) / (2 m (m+1)); mass is conserved and the support spreads as
    t^a.
    """
    a = 1.0 / (m + 1.0)
    k = (m - 1.0) / (2.0 * m * (m + 1.0))
    arg = C - k * np.asarray(x) ** 2 * t ** (-2 * a)
    return t ** (-a) * np.maximum(arg, 0.0) ** (1.0 / (m - 1.0))


def barenblatt_support_radius(t, m, C=1.0) -> float:
    k = (m - 1.0) / (2.0 * m * (m + 1.0))
    return float(np.sqrt(C / k) * t ** (1.0 / (m + 1.0)))


@dataclass
class StudyRow:
    level: int
    error: float


@dataclass
class StudyResult:
    name: str
    rows: list
    orders: list

    def table(self) -> str:
        lines = [f"study: {self.name}", f"{'cells':>8s} {'error':>14s} {'order':>8s}"]
        for i, row in enumerate(self.rows):
            p = f"{self.orders[i - 1]:8.3f}" if i > 0 else " " * 8
            lines.append(f"{row.level:8d} {row.error:14.6e} {p}")
        return "\n".join(lines)


def _orders(rows):
    out = []
    for a, b in zip(rows[:-1], rows[1:]):
        out.append(float(np.log2(a.error / b.error)))
    return out


def run_barenblatt(config, levels) -> StudyResult:
    """L1 error against the closed-form profile on each grid level."""
    model = config.build_model()
    if model.n_species != 1:
        raise ConfigError(["study.kind barenblatt: needs a single-species model"])
    if not isinstance(model.kappa, ConstantKappa):
        raise ConfigError(["study.kind barenblatt: needs constant porosity"])
    law = model.pressure_law
    m_exp = law.alpha + 1.0
    c_eff = model.kappa.value * law.c0 * law.alpha / (law.alpha + 1.0)
    t0 = config["study.t0"]
    duration = config.get("study.duration", config["time.t_end"])
    floor = config["study.floor"]
    L = config["grid.length_x"]
    # sized so the support stays strictly interior through the final time
    r_end = barenblatt_support_radius(c_eff * (t0 + duration), m_exp)
    if r_end >= L / 2:
        raise ConfigError(
            [
                f"study: final-time support radius {r_end:.3f} reaches the boundary "
                f"(half-length {L / 2:.3f}); enlarge grid.length_x"
            ]
        )
    rows = []
    base_n = levels[0]
    for n in levels:
        grid = StructuredGrid((n,), (L,), origin=(-L / 2,))
        x = grid.cell_centers()[:, 0]
        w0 = np.maximum(barenblatt_profile(x, c_eff * t0, m_exp), floor)
        pp = ParabolicProblem(grid=grid, model=model, newton_tol=config["solver.newton_tol"])
        ps = ParabolicState.from_w(0.0, ScalarField(grid, w0), pp)
        dt = config["time.dt"] * (base_n / n)
        nst = int(round(duration / dt))
        for _ in range(nst):
            ps = step_implicit(ps, dt, pp)
        w_exact = np.maximum(barenblatt_profile(x, c_eff * (t0 + nst * dt), m_exp), floor)
        err = float(np.sum(np.abs(ps.w.values - w_exact)) * grid.spacing[0])
        rows.append(StudyRow(n, err))
    return StudyResult("barenblatt", rows, _orders(rows))


def run_translation(config, levels) -> StudyResult:
    """Constant-velocity advection of a Gaussian fraction bump vs the shift."""
    vel = config["study.velocity"]
    duration = config.get("study.duration", config["time.t_end"])
    dt = config["time.dt"]
    L = config["grid.length_x"]
    n_sub = config["solver.n_sub"]
    order = config["solver.rk_order"]
    width = 0.06 * L
    x0 = 0.35 * L
    shift = vel * duration
    if not (0.15 * L < x0 + shift < 0.85 * L):
        raise ConfigError(["study: translated bump leaves the interior; shrink duration"])

    def bump(x, c):
        return 0.2 + 0.6 * np.exp(-((x - c) ** 2) / (2 * width**2))

    rows = []
    for n in levels:
        grid = StructuredGrid(
            (n,), (L,), tags={"left": "dirichlet_pressure", "right": "dirichlet_pressure"}
        )
        x = grid.cell_centers()[:, 0]
        u1 = bump(x, x0)
        u = np.stack([u1, 1.0 - u1])
        from .transport import InflowData

        fs = FractionState(0.0, SpeciesField(grid, u), mode="exact_linear")
        vf = np.full(n + 1, vel)
        inflow = InflowData({"left": np.array([0.2, 0.8]), "right": np.array([0.2, 0.8])})
        nst = int(round(duration / dt))
        for k in range(nst):
            sampler = VelocitySampler(
                grid,
                FaceVectorField(grid, [vf.copy()]),
                FaceVectorField(grid, [vf.copy()]),
                fs.t,
                fs.t + dt,
            )
            fs = semi_lagrangian_step(fs, sampler, dt, n_sub=n_sub, order=order, inflow=inflow)
        exact = bump(x, x0 + vel * nst * dt)
        err = float(np.max(np.abs(fs.u.values[0] - exact)))
        rows.append(StudyRow(n, err))
    return StudyResult("translation", rows, _orders(rows))


def run_oracle_compare(config, levels) -> StudyResult:
    """Decomposed vs direct solver L1 gap at fixed time per level."""
    base = config.values
    duration = config.get("study.duration", base["time.t_end"])
    rows = []
    base_n = levels[0]
    for n in levels:
        cfg = config.with_overrides({"grid.nx": n})
        problem, rho0 = cfg.build_problem()
        dt_dec = base["time.dt"] * (base_n / n)
        state_dec, _ = run(problem, rho0, duration, dt_dec)
        # direct run at its stability limit
        dt_cfl = direct_cfl_limit(rho0.values, problem)
        nst = int(np.ceil(duration / dt_cfl))
        dt_dir = duration / nst
        state_dir, _ = run(problem, rho0, duration, dt_dir, stepper="direct")
        gap = float(
            np.sum(np.abs(state_dec.rho.values - state_dir.rho.values)) * problem.grid.cell_volume
        )
        rows.append(StudyRow(n, gap))
    return StudyResult("oracle_compare", rows, _orders(rows))


STUDIES = {
    "barenblatt": run_barenblatt,
    "translation": run_translation,
    "oracle_compare": run_oracle_compare,
}


def run_study(config, name: str, levels) -> StudyResult:
    if name not in STUDIES:
        raise ConfigError([f"unknown study {name!r}; pick one of {sorted(STUDIES)}"])
    return STUDIES[name](config, levels)
