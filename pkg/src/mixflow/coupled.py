"""Orchestration of the decomposed solver and the direct oracle.

A step of the decomposed pipeline solves the volume-extension equation
implicitly, rebuilds the Darcy velocity at both time levels, advects the
fractions semi-Lagrangianly against the time-interpolated velocity and
reconstructs the densities as rho = w * u.  With reactions the whole
sequence sits inside a fixed-point loop that freezes the fractions
entering the w-source and iterates until the source (and the fractions)
stop moving.

The semi-Lagrangian update is not conservative on its own, so the step
optionally applies a conservative remap correction: per-species mass
defects are redistributed over cells weighted by the local difference
between the multilinear and the nearest-cell update (the cells where
interpolation actually did something), constrained cellwise to the
tangent space of L so L(u) = 1 survives.  This is the classical
mass-fixer construction for semi-Lagrangian schemes and it leaves exact
or segregated profiles untouched.

``step_direct`` is the independent cross-check: an upwinded finite-volume
update of each density with flux rho_i * v on faces, never reading the
decomposition's internals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CFLError, PicardError, SolverError
from .grid import (
    BoundaryTag,
    FaceVectorField,
    ScalarField,
    SpeciesField,
    StructuredGrid,
    divergence,
    face_gradient,
)
from .mixture import MixtureModel
from .parabolic import (
    KirchhoffMap,
    ParabolicProblem,
    ParabolicState,
    _face_average,
    dissipation_integral,
    step_implicit,
    velocity_from_w,
)
from .transport import (
    FractionState,
    InflowData,
    ReactionField,
    VelocitySampler,
    semi_lagrangian_step,
    trace_back,
    transport_with_reaction,
)


@dataclass
class CoupledProblem:
    """Everything a decomposed or direct run needs besides the state."""

    grid: StructuredGrid
    model: MixtureModel
    dirichlet_pressure: dict[str, float] = field(default_factory=dict)
    gravity: tuple[float, tuple[float, ...]] | None = None
    reaction: ReactionField | None = None
    inflow: InflowData | None = None
    n_sub: int = 4
    rk_order: int = 2
    constraint_mode: str = "auto"
    newton_tol: float = 1e-10
    max_iters: int = 50
    cg_tol: float = 1e-12
    picard_tol: float = 1e-10
    max_picard: int = 20
    mass_fixer: bool = True
    vacuum_tol: float = 1e-12
    truncation: tuple[float, float] | None = None
    cfl_safety: float = 0.45
    direct_mode: str = "explicit"

    def __post_init__(self):
        if self.constraint_mode == "auto":
            self.constraint_mode = (
                "exact_linear" if self.model.lambda_is_linear else "renormalize"
            )
        self._kirchhoff = KirchhoffMap(self.model, truncation=self.truncation)

    def parabolic(self, source=None) -> ParabolicProblem:
        return ParabolicProblem(
            grid=self.grid,
            model=self.model,
            dirichlet_pressure=dict(self.dirichlet_pressure),
            source=source,
            gravity=self.gravity,
            kirchhoff=self._kirchhoff,
            newton_tol=self.newton_tol,
            max_iters=self.max_iters,
            cg_tol=self.cg_tol,
        )


@dataclass
class MixtureState:
    """Densities plus the decomposition variables at one time level.

    Invariants: rho = w * u cellwise and L(rho) = w to the constraint-mode
    tolerance (exact division identities at construction).
    """

    t: float
    rho: SpeciesField
    w: ScalarField
    u: SpeciesField
    pressure: ScalarField
    velocity: FaceVectorField | None = None
    newton_iters: int = 0
    picard_iters: int = 0
    newton_residuals: list = field(default_factory=list)

    @property
    def grid(self) -> StructuredGrid:
        return self.rho.grid


@dataclass
class StepRecord:
    t: float
    dt: float
    masses: tuple
    free_energy: float
    dissipation: float
    min_w: float
    max_w: float
    max_lambda_dev: float
    newton_iters: int
    picard_iters: int


class DiagnosticsLog:
    """Append-only per-step record of the conserved and monitored quantities."""

    def __init__(self):
        self.records: list[StepRecord] = []

    def append(self, rec: StepRecord) -> None:
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.asarray([getattr(r, name) for r in self.records])


def init_decomposition(rho0: SpeciesField, model: MixtureModel,
                       vacuum_tol: float = 1e-12) -> MixtureState:
    """Split initial densities into w = L(rho0) and fractions u = rho0 / w.

    Rejects vacuum: every cell needs sum_i rho_i >= vacuum_tol > 0, and the
    error names the first offending cell.
    """
    vals = rho0.values
    if np.any(vals < 0):
        raise ValueError("initial densities must be nonnegative")
    sums = np.sum(vals, axis=0)
    if np.min(sums) < vacuum_tol:
        idx = np.unravel_index(int(np.argmin(sums)), sums.shape)
        raise ValueError(
            f"vacuum cell at index {tuple(int(i) for i in idx)}: total density "
            f"{float(np.min(sums)):.3e} < {vacuum_tol:g}"
        )
    w = model.eval_lambda(vals)
    u = vals / w
    g = rho0.grid
    return MixtureState(
        t=0.0,
        rho=rho0.copy(),
        w=ScalarField(g, w),
        u=SpeciesField(g, u),
        pressure=ScalarField(g, model.pressure_of_w(w)),
    )


# ---------------------------------------------------------------------------
# conservative remap correction


def _nearest_sample(u_vals: np.ndarray, feet: np.ndarray, grid: StructuredGrid) -> np.ndarray:
    """Donor-cell (nearest center) sample of the fractions at the feet."""
    idx = []
    for d in range(grid.dim):
        s = (feet[:, d] - grid.origin[d]) / grid.spacing[d] - 0.5
        idx.append(np.clip(np.rint(s).astype(np.int64), 0, grid.shape[d] - 1))
    flat = u_vals.reshape(u_vals.shape[0], -1)
    if grid.dim == 1:
        cols = idx[0]
    else:
        cols = idx[0] * grid.shape[1] + idx[1]
    return flat[:, cols]


def _mass_fix(u_new: np.ndarray, u_low: np.ndarray, w_new: np.ndarray,
              targets: np.ndarray, model: MixtureModel, vol: float,
              envelope: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    """Redistribute per-species mass defects without touching w or L(u).

    Solves the small KKT system of: minimize the capacity-weighted norm of
    the correction subject to (a) per-cell orthogonality to grad L(u)
    (so L(u) = 1 is preserved to first order) and (b) the per-species
    global masses of w*u hitting their targets.  Capacity is the
    high-order/low-order update difference, so exact regions (constant or
    segregated fractions) get no correction at all.
    """
    N = u_new.shape[0]
    W = (w_new * vol).ravel()
    flat = u_new.reshape(N, -1)
    defect = targets - (flat * W).sum(axis=1)
    scale = np.maximum(np.abs(targets), 1.0)
    if np.all(np.abs(defect) <= 1e-15 * scale):
        return u_new
    cap = np.abs(flat - u_low)
    if float(np.max(cap)) == 0.0:
        return u_new
    gamma = model.grad_lambda(np.maximum(u_new, 1e-300)).reshape(N, -1)

    lo, hi = envelope
    u_out = flat.copy()
    for _ in range(12):
        D = np.sum(gamma**2 * cap, axis=0)
        safe = D > 0
        A = np.zeros((N, N))
        for i in range(N):
            A[i, i] += np.sum(W**2 * cap[i])
            for j in range(N):
                term = np.zeros_like(D)
                term[safe] = (
                    W[safe] ** 2 * cap[i, safe] * gamma[i, safe]
                    * gamma[j, safe] * cap[j, safe] / D[safe]
                )
                A[i, j] -= np.sum(term)
        # the system is consistent but rank-deficient when the defects are
        # linearly constrained (e.g. equal extension coefficients); the
        # minimal-norm multiplier is the right gauge choice
        mu, *_ = np.linalg.lstsq(A, defect, rcond=None)
        theta = np.zeros_like(D)
        theta[safe] = -W[safe] * np.sum(gamma[:, safe] * cap[:, safe] * mu[:, None], axis=0) / D[safe]
        delta = cap * (mu[:, None] * W[None, :] + theta[None, :] * gamma)
        # per-cell feasibility: scale each cell's correction so u stays in
        # [lo, hi]; scaling a whole cell keeps the tangency constraint exact
        cand = u_out + delta
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio_hi = np.where(cand > hi[:, None], (hi[:, None] - u_out) / delta, 1.0)
            ratio_lo = np.where(cand < lo[:, None], (lo[:, None] - u_out) / delta, 1.0)
        lam_c = np.clip(np.min(np.minimum(ratio_hi, ratio_lo), axis=0), 0.0, 1.0)
        lam_c = np.where(np.isfinite(lam_c), lam_c, 0.0)
        u_out = u_out + delta * lam_c[None, :]
        saturated = lam_c < 1.0
        if np.any(saturated):
            cap = cap.copy()
            cap[:, saturated] = 0.0
        defect = targets - (u_out * W).sum(axis=1)
        if np.all(np.abs(defect) <= 1e-15 * scale) or float(np.max(cap)) == 0.0:
            break
    return u_out.reshape(u_new.shape)


# ---------------------------------------------------------------------------


def step_decomposed(state: MixtureState, dt: float, problem: CoupledProblem) -> MixtureState:
    """One step of the decomposition pipeline (with optional reaction loop).

    Order: implicit w-solve, velocity snapshots at both time levels,
    semi-Lagrangian fraction transport, reconstruction rho = w u.  In
    reaction mode the w-source is evaluated at the previous fraction
    iterate and the loop repeats until the source and the fractions are
    stationary to picard_tol; a zero rate field therefore terminates after
    a single iteration with the non-reactive step's arithmetic.
    """
    g = problem.grid
    model = problem.model
    mode = problem.constraint_mode
    t0, t1 = state.t, state.t + dt
    fs_old = FractionState(t=t0, u=state.u, mode=mode)

    if problem.reaction is None:
        pp = problem.parabolic()
        ps_old = ParabolicState.from_w(t0, state.w, pp)
        v0, _ = velocity_from_w(ps_old, pp)
        ps_new = step_implicit(ps_old, dt, pp)
        v1, _ = velocity_from_w(ps_new, pp)
        sampler = VelocitySampler(g, v0, v1, t0, t1)
        centers = g.cell_centers()
        tr = trace_back(sampler, centers, t1, t0, n_sub=problem.n_sub, order=problem.rk_order)
        fs_new = semi_lagrangian_step(
            fs_old, sampler, dt, model=model, n_sub=problem.n_sub,
            order=problem.rk_order, inflow=problem.inflow, trace=tr,
        )
        u_new = fs_new.u.values
        open_run = any(
            g.tag(s) is BoundaryTag.DIRICHLET_PRESSURE for s in g.sides()
        )
        if problem.mass_fixer and not open_run:
            u_low = _nearest_sample(state.u.values, tr.feet, g)
            targets = state.rho.integrals()
            envelope = (
                state.u.values.reshape(model.n_species, -1).min(axis=1),
                state.u.values.reshape(model.n_species, -1).max(axis=1),
            )
            u_new = _mass_fix(
                u_new, u_low, ps_new.w.values, targets, model, g.cell_volume, envelope
            )
            if mode == "renormalize":
                # the correction is tangent to L only to first order
                u_new = u_new / model.eval_lambda(u_new)
        picard_iters = 0
    else:
        w_old_vals = state.w.values
        u_bar = state.u.values
        src = problem.reaction.f(w_old_vals, u_bar)
        u_prev = None
        fs_new = None
        ps_new = None
        v1 = None
        pp_plain = problem.parabolic()
        ps_old = ParabolicState.from_w(t0, state.w, pp_plain)
        v0, _ = velocity_from_w(ps_old, pp_plain)
        for k in range(1, problem.max_picard + 1):
            pp = problem.parabolic(source=lambda w, u, arr=src: arr)
            ps_new = step_implicit(ps_old, dt, pp, u_cells=u_bar)
            v1, _ = velocity_from_w(ps_new, pp)
            sampler = VelocitySampler(g, v0, v1, t0, t1)
            fs_new = transport_with_reaction(
                fs_old, sampler, (state.w, ps_new.w), dt, problem.reaction,
                model, n_sub=problem.n_sub, order=problem.rk_order,
                inflow=problem.inflow,
            )
            u_k = fs_new.u.values
            src_next = problem.reaction.f(w_old_vals, u_k)
            d_src = float(np.max(np.abs(src_next - src)))
            src_scale = max(1.0, float(np.max(np.abs(src))))
            if d_src <= problem.picard_tol * src_scale:
                picard_iters = k
                break
            if u_prev is not None and float(np.max(np.abs(u_k - u_prev))) <= problem.picard_tol:
                picard_iters = k
                break
            src = src_next
            u_bar = u_k
            u_prev = u_k
        else:
            raise PicardError(
                f"reaction coupling did not converge in {problem.max_picard} iterations"
            )
        u_new = fs_new.u.values

    rho_new = ps_new.w.values * u_new
    return MixtureState(
        t=t1,
        rho=SpeciesField(g, rho_new),
        w=ps_new.w,
        u=SpeciesField(g, u_new),
        pressure=ScalarField(g, model.pressure_of_w(ps_new.w.values)),
        velocity=v1,
        newton_iters=ps_new.newton_iters,
        picard_iters=picard_iters,
        newton_residuals=ps_new.newton_residuals,
    )


def _upwind_flux(rho_c: np.ndarray, v: FaceVectorField, grid: StructuredGrid,
                 boundary_rho: dict[str, float] | None = None) -> FaceVectorField:
    """Donor-cell flux rho_up * v per face for one species.

    On boundary faces the upwind value is the interior cell for outflow and
    the prescribed exterior density for inflow (falling back to the interior
    cell when no exterior value is given; irrelevant on no-penetration faces
    where v is exactly zero).
    """
    boundary_rho = boundary_rho or {}
    F = FaceVectorField(grid)
    for d in range(grid.dim):
        vc = v.components[d]
        up = np.zeros_like(vc)
        lo_side, hi_side = ("left", "right") if d == 0 else ("bottom", "top")

        def lo_upwind(v_b, interior):
            # low face: positive normal velocity means inflow
            ext = boundary_rho.get(lo_side)
            return np.where(v_b > 0, ext if ext is not None else interior, interior)

        def hi_upwind(v_b, interior):
            ext = boundary_rho.get(hi_side)
            return np.where(v_b < 0, ext if ext is not None else interior, interior)

        if grid.dim == 1:
            up[1:-1] = np.where(vc[1:-1] > 0, rho_c[:-1], rho_c[1:])
            up[0] = lo_upwind(vc[0], rho_c[0])
            up[-1] = hi_upwind(vc[-1], rho_c[-1])
        elif d == 0:
            up[1:-1, :] = np.where(vc[1:-1, :] > 0, rho_c[:-1, :], rho_c[1:, :])
            up[0, :] = lo_upwind(vc[0, :], rho_c[0, :])
            up[-1, :] = hi_upwind(vc[-1, :], rho_c[-1, :])
        else:
            up[:, 1:-1] = np.where(vc[:, 1:-1] > 0, rho_c[:, :-1], rho_c[:, 1:])
            up[:, 0] = lo_upwind(vc[:, 0], rho_c[:, 0])
            up[:, -1] = hi_upwind(vc[:, -1], rho_c[:, -1])
        F.components[d][...] = up * vc
    F.enforce_no_penetration()
    return F


def direct_cfl_limit(rho_vals: np.ndarray, problem: CoupledProblem) -> float:
    """Largest stable explicit dt: safety / (max a(w) * sum_d 1/h_d^2)."""
    model = problem.model
    w = model.eval_lambda(rho_vals)
    a_max = float(np.max(model.diffusion_coefficient(w)))
    inv = sum(1.0 / h**2 for h in problem.grid.spacing)
    return problem.cfl_safety / (a_max * inv) if a_max > 0 else np.inf


def step_direct(state: MixtureState, dt: float, problem: CoupledProblem) -> SpeciesField:
    """Independent cross-diffusion update of the densities (the oracle).

    Finite volumes with the full face velocity v = -kappa grad G(L(rho))
    and donor-cell upwinding of each rho_i; never reads w or u from the
    decomposition.  Explicit mode enforces the diffusion stability limit;
    "picard" mode iterates the backward-Euler fixed point instead.
    """
    g = problem.grid
    model = problem.model
    rho_old = state.rho.values

    def flux_div(rho_vals):
        w = model.eval_lambda(rho_vals)
        p = ScalarField(g, model.pressure_of_w(w))
        p_bnd = {}
        w_bnd = {}
        bnd_rho = {}
        for side, p0 in problem.dirichlet_pressure.items():
            p_bnd[side] = float(p0)
            w_bnd[side] = float(model.pressure_law.g_inv(p0))
        grad_p = face_gradient(p, p_bnd)
        v = FaceVectorField(g)
        for d in range(g.dim):
            wf = _face_average(w, g, d, w_bnd)
            v.components[d][...] = -model.kappa(wf) * grad_p.components[d]
        v.enforce_no_penetration()
        out = np.empty_like(rho_vals)
        for i in range(rho_vals.shape[0]):
            b_rho = {}
            for side, wb in w_bnd.items():
                if problem.inflow is not None and side in problem.inflow.per_side:
                    b_rho[side] = wb * float(problem.inflow.per_side[side][i])
            out[i] = divergence(_upwind_flux(rho_vals[i], v, g, b_rho)).values
        return out

    if problem.direct_mode == "explicit":
        dt_max = direct_cfl_limit(rho_old, problem)
        if dt > dt_max * (1 + 1e-12):
            raise CFLError(
                f"explicit oracle step dt={dt:.3e} exceeds stability limit {dt_max:.3e}"
            )
        rho_new = rho_old - dt * flux_div(rho_old)
    else:
        rho_new = rho_old.copy()
        scale = float(np.max(np.abs(rho_old)))
        for _ in range(500):
            rho_next = rho_old - dt * flux_div(rho_new)
            if float(np.max(np.abs(rho_next - rho_new))) <= 1e-13 * max(scale, 1.0):
                rho_new = rho_next
                break
            rho_new = rho_next
        else:
            raise SolverError("backward-Euler fixed point for the oracle stalled")
    return SpeciesField(g, rho_new)


# ---------------------------------------------------------------------------
# time loop


def _diagnostics_record(state: MixtureState, dt: float, problem: CoupledProblem) -> StepRecord:
    model = problem.model
    masses = tuple(float(x) for x in state.rho.integrals())
    pp = problem.parabolic()
    ps = ParabolicState.from_w(state.t, state.w, pp)
    diss = dissipation_integral(ps, pp)
    lam_u = model.eval_lambda(state.u.values)
    fe = float(np.sum(model.h_of_w(model.eval_lambda(state.rho.values)))) * problem.grid.cell_volume
    return StepRecord(
        t=state.t,
        dt=dt,
        masses=masses,
        free_energy=fe,
        dissipation=diss,
        min_w=float(np.min(state.w.values)),
        max_w=float(np.max(state.w.values)),
        max_lambda_dev=float(np.max(np.abs(lam_u - 1.0))),
        newton_iters=state.newton_iters,
        picard_iters=state.picard_iters,
    )


def run(problem: CoupledProblem, initial: MixtureState | SpeciesField, t_end: float,
        dt: float, dt_min: float | None = None, output_every: int = 0,
        on_snapshot=None, stepper: str = "decomposed"):
    """Advance from the initial state to t_end; returns (state, DiagnosticsLog).

    Accepted steps append one diagnostics record each.  On a solver
    failure the step size is halved and the step retried (down to dt_min,
    a 1024th of dt by default); after five consecutive successes at a
    reduced step the size is doubled back toward the configured dt.  The
    whole loop is deterministic for a given problem and initial state.
    """
    if isinstance(initial, SpeciesField):
        state = init_decomposition(initial, problem.model, problem.vacuum_tol)
    else:
        state = initial
    if dt_min is None:
        dt_min = dt / 1024.0
    log = DiagnosticsLog()
    if on_snapshot is not None:
        on_snapshot(0, state)
    step_idx = 0
    dt_cur = dt
    streak = 0
    t_tol = 1e-12 * max(t_end, 1.0)
    while state.t < t_end - t_tol:
        dt_eff = min(dt_cur, t_end - state.t)
        try:
            if stepper == "decomposed":
                new_state = step_decomposed(state, dt_eff, problem)
            elif stepper == "direct":
                rho_new = step_direct(state, dt_eff, problem)
                new_state = _state_from_rho(rho_new, state.t + dt_eff, problem)
            else:
                raise ValueError(f"unknown stepper {stepper!r}")
        except SolverError as err:
            dt_cur = dt_cur / 2.0
            streak = 0
            if dt_cur < dt_min:
                raise SolverError(
                    f"step {step_idx} at t={state.t:.6g} failed and dt fell below "
                    f"{dt_min:g}: {err}"
                ) from err
            continue
        state = new_state
        step_idx += 1
        if dt_cur < dt:
            streak += 1
            if streak >= 5:
                dt_cur = min(2.0 * dt_cur, dt)
                streak = 0
        log.append(_diagnostics_record(state, dt_eff, problem))
        if on_snapshot is not None and output_every > 0 and step_idx % output_every == 0:
            on_snapshot(step_idx, state)
    if on_snapshot is not None and (output_every == 0 or step_idx % output_every != 0):
        if step_idx > 0:
            on_snapshot(step_idx, state)
    return state, log


def _state_from_rho(rho: SpeciesField, t: float, problem: CoupledProblem) -> MixtureState:
    model = problem.model
    w = model.eval_lambda(rho.values)
    u = rho.values / w
    g = rho.grid
    return MixtureState(
        t=t,
        rho=rho,
        w=ScalarField(g, w),
        u=SpeciesField(g, u),
        pressure=ScalarField(g, model.pressure_of_w(w)),
    )
