"""Implicit solver for the volume-extension equation.

The scalar field w obeys a porous-medium-type equation

    dw/dt = div( a(w) grad w ) + source,    a(w) = kappa(w) w G'(w),

with zero-flux or prescribed-value (pressure) boundaries.  Each step is
backward Euler on the Kirchhoff variable y = B(w), B' = a, which turns the
spatial operator into the plain Laplacian of y.  Newton's method on y then
has the Jacobian  diag(1/a(w)) + dt * A  with A the (SPD) discrete
negative Laplacian, so the linear solves are a tridiagonal factorization
in 1D and diagonally preconditioned conjugate gradients in 2D.

Two structural properties of the continuous equation survive exactly in
this discretization (up to the Newton residual): the cell balance is in
flux form, so the integral of w is conserved under zero-flux boundaries,
and the M-matrix structure of the Jacobian gives a discrete maximum
principle, min w_old <= w_new <= max w_old for source-free steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import backend as _kern
from .errors import NewtonError
from .grid import (
    BoundaryTag,
    FaceVectorField,
    ScalarField,
    StructuredGrid,
    divergence,
    face_gradient,
)
from .mixture import ConstantKappa, MixtureModel, PowerLaw, PowerLawKappa, TabulatedKappa


class KirchhoffMap:
    """Monotone primitive B(s) = int_{s_ref}^{s} a(z) dz and its inverse.

    For power-law pressure with constant or power-law porosity the map is a
    single power and both directions are closed-form.  For tabulated
    porosity the integrand is piecewise (linear kappa) * (power), which
    still integrates in closed form per table segment; the inverse then
    brackets the segment and polishes with a safeguarded Newton iteration.

    Optional truncation bounds restrict the admissible w-range; forward
    evaluation outside the bounds raises, and the inverse clips into the
    corresponding y-range (used to keep Newton line searches admissible).
    """

    def __init__(self, model: MixtureModel, s_ref: float = 0.0, truncation=None):
        # s_ref = 0 is the well-conditioned gauge for power laws: B is then a
        # pure power and the inverse involves no cancellation near w = 0.
        if s_ref < 0:
            raise ValueError("reference point must be nonnegative")
        self.model = model
        self.s_ref = float(s_ref)
        self.truncation = None
        if truncation is not None:
            lo, hi = float(truncation[0]), float(truncation[1])
            if not (0 < lo < hi):
                raise ValueError(f"truncation bounds must satisfy 0 < lo < hi, got {truncation}")
            self.truncation = (lo, hi)
        law = model.pressure_law
        kap = model.kappa
        self._segments = None
        if isinstance(law, PowerLaw) and isinstance(kap, (ConstantKappa, PowerLawKappa)):
            if isinstance(kap, ConstantKappa):
                k0, q = kap.value, 0.0
            else:
                k0, q = kap.coeff, kap.exponent
            # a(s) = k0 c0 alpha s^(alpha+q)
            self._amp = k0 * law.c0 * law.alpha
            self._pow = law.alpha + q
            if self._pow <= -1.0:
                raise ValueError("Kirchhoff integrand must be integrable at 0")
        elif isinstance(law, PowerLaw) and isinstance(kap, TabulatedKappa):
            self._build_segments(law, kap)
        else:
            raise ValueError(f"unsupported pressure/porosity combination: {law!r}, {kap!r}")

    # -- closed-form single-power branch -------------------------------------

    def _power_forward(self, s):
        p1 = self._pow + 1.0
        return self._amp / p1 * (np.power(s, p1) - self.s_ref**p1)

    def _power_inverse(self, y):
        p1 = self._pow + 1.0
        arg = p1 * np.asarray(y, dtype=float) / self._amp + self.s_ref**p1
        with np.errstate(invalid="ignore"):
            return np.power(arg, 1.0 / p1)

    # -- segmented branch for tabulated porosity ------------------------------

    def _build_segments(self, law, kap):
        self._law = law
        knots = np.unique(np.concatenate([[0.0], kap.w_points]))
        nseg = len(knots)
        c = np.empty(nseg)
        m = np.empty(nseg)
        for k in range(nseg):
            lo = knots[k]
            if k + 1 < nseg:
                hi = knots[k + 1]
                klo, khi = float(kap(lo)), float(kap(hi))
                m[k] = (khi - klo) / (hi - lo)
            else:
                klo = float(kap(lo))
                m[k] = 0.0  # kappa clamps to the last table value
            c[k] = klo - m[k] * lo
        self._seg_knots = knots
        self._seg_c = c
        self._seg_m = m
        cum = np.zeros(nseg)
        for k in range(nseg - 1):
            cum[k + 1] = cum[k] + self._seg_prim(knots[k + 1], k) - self._seg_prim(knots[k], k)
        self._seg_cum = cum
        self._segments = True
        self._offset = float(self._raw_forward(np.atleast_1d(float(self.s_ref)))[0])

    def _seg_prim(self, z, k):
        # primitive of (c + m z) z G'(z) = c0 a (c z^a + m z^(a+1)) on segment k
        al, c0 = self._law.alpha, self._law.c0
        return c0 * al * (
            self._seg_c[k] * np.power(z, al + 1) / (al + 1)
            + self._seg_m[k] * np.power(z, al + 2) / (al + 2)
        )

    def _raw_forward(self, s):
        s = np.asarray(s, dtype=float)
        knots = self._seg_knots
        idx = np.clip(np.searchsorted(knots, s, side="right") - 1, 0, len(knots) - 1)
        out = np.empty_like(s)
        for k in np.unique(idx):
            msk = idx == k
            out[msk] = self._seg_cum[k] + self._seg_prim(s[msk], k) - self._seg_prim(knots[k], k)
        return out

    # -- public API ------------------------------------------------------------

    def a(self, s):
        """Diffusion coefficient a(s) = kappa(s) s G'(s)."""
        return self.model.diffusion_coefficient(s)

    def forward(self, s):
        """B(s); raises if truncation is enabled and s falls outside it."""
        s = np.asarray(s, dtype=float)
        if self.truncation is not None:
            lo, hi = self.truncation
            if np.any((s < lo) | (s > hi)):
                raise ValueError(
                    f"argument outside truncation bounds [{lo}, {hi}]"
                )
        if self._segments is None:
            return self._power_forward(s)
        return self._raw_forward(s) - self._offset

    def inverse(self, y):
        """B^{-1}(y); invalid (negative-w) arguments map to nan."""
        y = np.asarray(y, dtype=float)
        if self._segments is None:
            w = self._power_inverse(y)
        else:
            w = self._segmented_inverse(y)
        if self.truncation is not None:
            lo, hi = self.truncation
            w = np.clip(w, lo, hi)
        return w

    def _segmented_inverse(self, y):
        yr = np.atleast_1d(np.asarray(y, dtype=float) + self._offset)
        knots = self._seg_knots
        cum = self._seg_cum
        invalid = yr < 0
        idx = np.clip(np.searchsorted(cum, yr, side="right") - 1, 0, len(knots) - 1)
        lo_b = knots[idx].astype(float)
        # upper bracket: next knot, or grow geometrically in the open last segment
        hi_b = np.where(idx + 1 < len(knots), knots[np.minimum(idx + 1, len(knots) - 1)], np.nan)
        open_seg = ~np.isfinite(hi_b)
        if np.any(open_seg):
            hi = max(float(knots[-1]), self.s_ref, 1.0)
            for _ in range(200):
                need = open_seg & (self._raw_forward(np.full_like(yr, hi)) < yr)
                if not np.any(need):
                    break
                hi *= 2.0
            hi_b = np.where(open_seg, hi, hi_b)
        x = 0.5 * (lo_b + hi_b)
        for _ in range(100):
            fx = self._raw_forward(x) - yr
            hi_b = np.where(fx > 0, x, hi_b)
            lo_b = np.where(fx <= 0, x, lo_b)
            deriv = np.maximum(self.a(np.maximum(x, 1e-300)), 1e-300)
            xn = x - fx / deriv
            bad = (xn <= lo_b) | (xn >= hi_b) | ~np.isfinite(xn)
            xn = np.where(bad, 0.5 * (lo_b + hi_b), xn)
            done = np.all(np.abs(xn - x) <= 1e-16 * np.maximum(1.0, np.abs(x)))
            x = xn
            if done:
                break
        x = np.where(invalid, np.nan, x)
        return x.reshape(np.shape(y)) if np.ndim(y) else float(x[0])


@dataclass
class ParabolicProblem:
    """Grid, mixture model, boundary data and optional source/drift."""

    grid: StructuredGrid
    model: MixtureModel
    dirichlet_pressure: dict[str, float] = field(default_factory=dict)
    source: object = None  # callable (w_cells, u_cells|None) -> cell array
    gravity: tuple[float, tuple[float, ...]] | None = None  # (C0, g vector)
    kirchhoff: KirchhoffMap = None  # type: ignore[assignment]
    newton_tol: float = 1e-10
    max_iters: int = 50
    cg_tol: float = 1e-12

    def __post_init__(self):
        if self.kirchhoff is None:
            self.kirchhoff = KirchhoffMap(self.model)
        for side in self.dirichlet_pressure:
            if self.grid.tag(side) is not BoundaryTag.DIRICHLET_PRESSURE:
                raise ValueError(f"side {side!r} carries a pressure value but is not tagged open")
        for side in self.grid.sides():
            if self.grid.tag(side) is BoundaryTag.DIRICHLET_PRESSURE and side not in self.dirichlet_pressure:
                raise ValueError(f"open side {side!r} needs a boundary pressure value")
        if self.gravity is not None:
            c0, g = self.gravity
            if c0 <= 0:
                raise ValueError("gravity mode needs a positive fraction sum constant")
            if len(g) != self.grid.dim:
                raise ValueError("gravity vector must match the grid dimension")

    def boundary_w(self) -> dict[str, float]:
        """Prescribed w on open sides, from w = G^{-1}(p0)."""
        law = self.model.pressure_law
        return {s: float(law.g_inv(p)) for s, p in self.dirichlet_pressure.items()}

    def bc_codes(self) -> np.ndarray:
        return np.array(
            [
                1 if self.grid.tag(s) is BoundaryTag.DIRICHLET_PRESSURE else 0
                for s in self.grid.sides()
            ],
            dtype=np.int32,
        )


@dataclass
class ParabolicState:
    """w together with its Kirchhoff companion and the last velocity snapshot."""

    t: float
    w: ScalarField
    u_k: ScalarField
    velocity: FaceVectorField | None = None
    div_v: ScalarField | None = None
    newton_iters: int = 0
    newton_residuals: list = field(default_factory=list)

    @classmethod
    def from_w(cls, t: float, w: ScalarField, problem: ParabolicProblem) -> "ParabolicState":
        uk = ScalarField(w.grid, problem.kirchhoff.forward(w.values))
        return cls(t=t, w=w, u_k=uk)


def _neg_lap_matvec(x, diag, coef, grid, bc):
    inv = [1.0 / h**2 for h in grid.spacing]
    if grid.dim == 1:
        return _kern.matvec_1d(x, diag, coef, inv[0], bc)
    return _kern.matvec_2d(x, diag, coef, inv[0], inv[1], bc)


def _dirichlet_rhs(problem: ParabolicProblem, y_bnd: dict[str, float]) -> np.ndarray:
    """Constant per-cell contribution (2/h^2) * y_b on open boundary cells."""
    g = problem.grid
    out = np.zeros(g.shape)
    inv = [2.0 / h**2 for h in g.spacing]
    for side, yb in y_bnd.items():
        if g.dim == 1:
            out[0 if side == "left" else -1] += inv[0] * yb
        elif side == "left":
            out[0, :] += inv[0] * yb
        elif side == "right":
            out[-1, :] += inv[0] * yb
        elif side == "bottom":
            out[:, 0] += inv[1] * yb
        else:
            out[:, -1] += inv[1] * yb
    return out


def _jacobian_diagonal(problem: ParabolicProblem, inv_a: np.ndarray, dt: float) -> np.ndarray:
    """diag(J) for the Jacobi preconditioner: inv_a + dt * diag(A)."""
    g = problem.grid
    bc = problem.bc_codes()
    diag = np.zeros(g.shape)
    inv = [1.0 / h**2 for h in g.spacing]
    for d in range(g.dim):
        links = np.full(g.shape, 2.0)
        sl_lo = (0,) if g.dim == 1 else ((0, slice(None)) if d == 0 else (slice(None), 0))
        sl_hi = (-1,) if g.dim == 1 else ((-1, slice(None)) if d == 0 else (slice(None), -1))
        lo_code, hi_code = bc[2 * d], bc[2 * d + 1]
        links[sl_lo] = 1.0 + (2.0 if lo_code == 1 else 0.0)
        links[sl_hi] = 1.0 + (2.0 if hi_code == 1 else 0.0)
        diag += inv[d] * links
    return inv_a + dt * diag


def _solve_newton_system(problem, inv_a, dt, rhs):
    g = problem.grid
    bc = problem.bc_codes()
    if g.dim == 1:
        ih2 = 1.0 / g.spacing[0] ** 2
        n = g.shape[0]
        d = _jacobian_diagonal(problem, inv_a, dt)
        off = np.full(n, -dt * ih2)
        return _kern.thomas_solve(off, d, off, rhs)
    # 2D: diagonally preconditioned CG on the SPD Jacobian
    diag = _jacobian_diagonal(problem, inv_a, dt)
    b = rhs
    x = np.zeros_like(b)
    r = b.copy()
    z = r / diag
    p = z.copy()
    rz = float(np.sum(r * z))
    bnorm = float(np.sqrt(np.sum(b * b)))
    if bnorm == 0.0:
        return x
    tol = problem.cg_tol * bnorm
    for _ in range(20 * b.size):
        Ap = _neg_lap_matvec(p, inv_a, dt, g, bc)
        alpha = rz / float(np.sum(p * Ap))
        x += alpha * p
        r -= alpha * Ap
        if float(np.sqrt(np.sum(r * r))) <= tol:
            break
        z = r / diag
        rz_new = float(np.sum(r * z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x


def step_implicit(state: ParabolicState, dt: float, problem: ParabolicProblem,
                  u_cells: np.ndarray | None = None) -> ParabolicState:
    """One backward-Euler step of the w-equation in Kirchhoff form.

    Solves  B^{-1}(y) - w_old - dt*(lap_h y + source + drift) = 0  for the
    Kirchhoff variable y by damped Newton, then maps back to w.  The source
    and the gravity drift are evaluated at the old state, which keeps the
    Jacobian symmetric positive definite.  After the residual tolerance is
    met one extra Newton iteration runs, so the accepted cell balance holds
    to roundoff and summing it telescopes to exact mass conservation under
    zero-flux boundaries.

    Raises NewtonError when the tolerance cannot be met; the caller is
    expected to retry with a smaller dt.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    g = problem.grid
    kmap = problem.kirchhoff
    w_old = state.w.values
    bc = problem.bc_codes()

    rhs_cells = np.zeros(g.shape)
    if problem.source is not None:
        rhs_cells = rhs_cells + np.asarray(problem.source(w_old, u_cells), dtype=float)
    if problem.gravity is not None:
        rhs_cells = rhs_cells - _gravity_divergence(w_old, problem)
    y_bnd = {s: float(kmap.forward(np.asarray(wb))) for s, wb in problem.boundary_w().items()}
    bc_rhs = _dirichlet_rhs(problem, y_bnd)

    scale = float(np.max(np.abs(w_old)))
    tol = problem.newton_tol * max(scale, 1e-300)
    y = kmap.forward(w_old).copy()

    def residual(yv):
        w = kmap.inverse(yv)
        lap = -_neg_lap_matvec(yv, np.zeros(g.shape), 1.0, g, bc) + bc_rhs
        return w - w_old - dt * (lap + rhs_cells), w

    F, w_cur = residual(y)
    res = float(np.max(np.abs(F)))
    residuals = [res]
    polished = False
    iters = 0
    while iters < problem.max_iters:
        if res <= tol:
            if polished or res <= 50 * np.finfo(float).eps * max(scale, 1.0):
                break
            polished = True
        iters += 1
        inv_a = 1.0 / kmap.a(w_cur)
        delta = _solve_newton_system(problem, inv_a, dt, -F)
        lam = 1.0
        accepted = False
        for _ in range(30):
            y_try = y + lam * delta
            with np.errstate(invalid="ignore"):
                F_try, w_try = residual(y_try)
            r_try = float(np.max(np.abs(F_try))) if np.all(np.isfinite(F_try)) else np.inf
            if r_try < res or r_try <= 0.5 * tol:
                y, F, w_cur, res = y_try, F_try, w_try, r_try
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            break
        residuals.append(res)
    if res > tol:
        raise NewtonError(
            f"Newton stalled at residual {res:.3e} (tolerance {tol:.3e}) "
            f"after {iters} iterations",
            residual=res,
            iterations=iters,
        )

    w_new = ScalarField(g, w_cur)
    uk_new = ScalarField(g, kmap.forward(w_cur))
    return ParabolicState(
        t=state.t + dt,
        w=w_new,
        u_k=uk_new,
        newton_iters=iters,
        newton_residuals=residuals,
    )


def _face_average(w: np.ndarray, grid: StructuredGrid, axis: int,
                  boundary_values: dict[str, float]) -> np.ndarray:
    """Arithmetic face averages of a cell field along one axis.

    No-penetration faces copy the adjacent cell (their flux is zero anyway);
    open faces take the prescribed boundary trace.
    """
    shape = list(grid.shape)
    shape[axis] += 1
    out = np.zeros(tuple(shape))
    if grid.dim == 1:
        out[1:-1] = 0.5 * (w[1:] + w[:-1])
        out[0] = boundary_values.get("left", w[0])
        out[-1] = boundary_values.get("right", w[-1])
    elif axis == 0:
        out[1:-1, :] = 0.5 * (w[1:, :] + w[:-1, :])
        out[0, :] = boundary_values.get("left", w[0, :])
        out[-1, :] = boundary_values.get("right", w[-1, :])
    else:
        out[:, 1:-1] = 0.5 * (w[:, 1:] + w[:, :-1])
        out[:, 0] = boundary_values.get("bottom", w[:, 0])
        out[:, -1] = boundary_values.get("top", w[:, -1])
    return out


def _gravity_divergence(w: np.ndarray, problem: ParabolicProblem) -> np.ndarray:
    """div of the gravity flux kappa(w_f) C0 w_f^2 (g.e_d), zero on closed faces."""
    g = problem.grid
    c0, gvec = problem.gravity
    wb = problem.boundary_w()
    F = FaceVectorField(g)
    for d in range(g.dim):
        if gvec[d] == 0.0:
            continue
        wf = _face_average(w, g, d, wb)
        F.components[d][...] = problem.model.kappa(wf) * c0 * wf * wf * gvec[d]
    F.enforce_no_penetration()
    return divergence(F).values


def velocity_from_w(state: ParabolicState, problem: ParabolicProblem):
    """Darcy velocity v = -kappa(w) grad G(w) as face-normal components.

    Returns (v, div_v) and stores both on the state.  On no-penetration
    faces the normal component is exactly zero; in gravity mode the
    constant-fraction buoyancy kappa C0 w (g.n) is added on open/interior
    faces.
    """
    g = problem.grid
    law = problem.model.pressure_law
    w = state.w.values
    wb = problem.boundary_w()
    p_field = ScalarField(g, law.g(w))
    p_bnd = {s: float(law.g(np.asarray(v))) for s, v in wb.items()}
    grad_p = face_gradient(p_field, p_bnd)
    v = FaceVectorField(g)
    for d in range(g.dim):
        wf = _face_average(w, g, d, wb)
        v.components[d][...] = -problem.model.kappa(wf) * grad_p.components[d]
        if problem.gravity is not None:
            c0, gvec = problem.gravity
            if gvec[d] != 0.0:
                v.components[d][...] += problem.model.kappa(wf) * c0 * wf * gvec[d]
    v.enforce_no_penetration()
    div_v = divergence(v)
    state.velocity = v
    state.div_v = div_v
    return v, div_v


def dissipation_integral(state: ParabolicState, problem: ParabolicProblem) -> float:
    """Discrete kappa * |grad p|^2 integral (always nonnegative)."""
    g = problem.grid
    law = problem.model.pressure_law
    w = state.w.values
    wb = problem.boundary_w()
    p_field = ScalarField(g, law.g(w))
    p_bnd = {s: float(law.g(np.asarray(v))) for s, v in wb.items()}
    grad_p = face_gradient(p_field, p_bnd)
    total = 0.0
    for d in range(g.dim):
        wf = _face_average(w, g, d, wb)
        total += float(np.sum(problem.model.kappa(wf) * grad_p.components[d] ** 2))
    return total * g.cell_volume
