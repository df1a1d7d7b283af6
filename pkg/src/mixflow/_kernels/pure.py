"""Pure-numpy implementations of the hot kernels.

This is the fallback backend used when the compiled extension is not
available (or when MIXFLOW_PURE=1).  Signatures and semantics must match
``_core.pyx`` exactly; the test suite checks both backends against each
other.  All arrays are C-contiguous float64.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

NAME = "pure"


def thomas_solve(dl: np.ndarray, d: np.ndarray, du: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve a tridiagonal system; dl[0] and du[-1] are ignored."""
    n = d.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = du[:-1]
    ab[1, :] = d
    ab[2, :-1] = dl[1:]
    return solve_banded((1, 1), ab, b)


def matvec_1d(x, diag, coef, ihx2, bc):
    """y = diag*x + coef*(-lap x) with per-side BCs (0 zero-flux, 1 dirichlet)."""
    y = diag * x
    dflux = coef * ihx2 * (x[1:] - x[:-1])
    y[1:] += dflux
    y[:-1] -= dflux
    if bc[0] == 1:
        y[0] += coef * ihx2 * 2.0 * x[0]
    if bc[1] == 1:
        y[-1] += coef * ihx2 * 2.0 * x[-1]
    return y


def matvec_2d(x, diag, coef, ihx2, ihy2, bc):
    y = diag * x
    fx = coef * ihx2 * (x[1:, :] - x[:-1, :])
    y[1:, :] += fx
    y[:-1, :] -= fx
    fy = coef * ihy2 * (x[:, 1:] - x[:, :-1])
    y[:, 1:] += fy
    y[:, :-1] -= fy
    if bc[0] == 1:
        y[0, :] += coef * ihx2 * 2.0 * x[0, :]
    if bc[1] == 1:
        y[-1, :] += coef * ihx2 * 2.0 * x[-1, :]
    if bc[2] == 1:
        y[:, 0] += coef * ihy2 * 2.0 * x[:, 0]
    if bc[3] == 1:
        y[:, -1] += coef * ihy2 * 2.0 * x[:, -1]
    return y


def _axis_weights(q, origin, h, n, mode_lo, mode_hi):
    """Index/offset pairs for center-lattice interpolation along one axis.

    Queries are clamped to the closed domain.  In the half-cell band next
    to a wall, mode 0 freezes the offset (even reflection, convex weights)
    while mode 1 lets it run past [0, 1] (linear extrapolation).
    """
    lo = origin
    hi = origin + n * h
    qc = np.clip(q, lo, hi)
    s = (qc - lo) / h - 0.5
    j0 = np.floor(s).astype(np.int64)
    lam = s - j0
    below = j0 < 0
    above = j0 > n - 2
    j0 = np.clip(j0, 0, n - 2)
    if mode_lo == 0:
        lam = np.where(below, 0.0, lam)
    else:
        lam = np.where(below, s, lam)
    if mode_hi == 0:
        lam = np.where(above, 1.0, lam)
    else:
        lam = np.where(above, s - (n - 2), lam)
    # snap roundoff-level offsets so sampling at cell centers is exact
    lam = np.where(np.abs(lam) < 1e-12, 0.0, lam)
    lam = np.where(np.abs(lam - 1.0) < 1e-12, 1.0, lam)
    return j0, lam


def sample_1d(values, q, ox, hx, nx, mode_l, mode_r):
    j0, lam = _axis_weights(q, ox, hx, nx, mode_l, mode_r)
    return values[:, j0] * (1.0 - lam) + values[:, j0 + 1] * lam


def sample_2d(values, qx, qy, ox, hx, nx, oy, hy, ny, modes):
    i0, lx = _axis_weights(qx, ox, hx, nx, modes[0], modes[1])
    j0, ly = _axis_weights(qy, oy, hy, ny, modes[2], modes[3])
    v00 = values[:, i0, j0]
    v10 = values[:, i0 + 1, j0]
    v01 = values[:, i0, j0 + 1]
    v11 = values[:, i0 + 1, j0 + 1]
    return (
        v00 * (1 - lx) * (1 - ly)
        + v10 * lx * (1 - ly)
        + v01 * (1 - lx) * ly
        + v11 * lx * ly
    )


def _face_interp_1d(vf, x, ox, hx, nx):
    """Linear interpolation on the face lattice x_i = ox + i*hx, i=0..nx."""
    s = np.clip((x - ox) / hx, 0.0, float(nx))
    i0 = np.minimum(s.astype(np.int64), nx - 1)
    lam = s - i0
    return vf[i0] * (1.0 - lam) + vf[i0 + 1] * lam


def _mac_interp_x(vf, x, y, ox, hx, nx, oy, hy, ny):
    """Bilinear sample of the x-normal face array (nx+1, ny)."""
    sx = np.clip((x - ox) / hx, 0.0, float(nx))
    i0 = np.minimum(sx.astype(np.int64), nx - 1)
    lx = sx - i0
    sy = np.clip((y - oy) / hy - 0.5, 0.0, float(ny - 1))
    j0 = np.minimum(sy.astype(np.int64), ny - 2)
    ly = sy - j0
    return (
        vf[i0, j0] * (1 - lx) * (1 - ly)
        + vf[i0 + 1, j0] * lx * (1 - ly)
        + vf[i0, j0 + 1] * (1 - lx) * ly
        + vf[i0 + 1, j0 + 1] * lx * ly
    )


def _mac_interp_y(vf, x, y, ox, hx, nx, oy, hy, ny):
    """Bilinear sample of the y-normal face array (nx, ny+1)."""
    sy = np.clip((y - oy) / hy, 0.0, float(ny))
    j0 = np.minimum(sy.astype(np.int64), ny - 1)
    ly = sy - j0
    sx = np.clip((x - ox) / hx - 0.5, 0.0, float(nx - 1))
    i0 = np.minimum(sx.astype(np.int64), nx - 2)
    lx = sx - i0
    return (
        vf[i0, j0] * (1 - lx) * (1 - ly)
        + vf[i0 + 1, j0] * lx * (1 - ly)
        + vf[i0, j0 + 1] * (1 - lx) * ly
        + vf[i0 + 1, j0 + 1] * lx * ly
    )


def backtrace_1d(vx0, vx1, xq, theta1, theta0, dt_total, n_sub, order,
                 ox, hx, nx, modes):
    """Integrate dx/ds = v(x, s) backward over the snapshot interval.

    v blends the two face snapshots linearly in time (theta runs from
    theta1 at the start of the trace to theta0 at the end).  Returns
    (feet, exit_side, exit_frac): exit_side is -1 when the trajectory stays
    in the domain, else the side index through which it left (0 left,
    1 right); exit_frac is the backward-time fraction at the crossing.
    """
    m = xq.shape[0]
    x = xq.copy()
    feet = xq.copy()
    exit_side = np.full(m, -1, dtype=np.int32)
    exit_frac = np.zeros(m)
    active = np.ones(m, dtype=bool)
    lo = ox
    hi = ox + nx * hx
    hs = -dt_total / n_sub
    dth = (theta0 - theta1) / n_sub

    def vel(xs, th):
        vf = (1.0 - th) * vx0 + th * vx1
        return _face_interp_1d(vf, xs, ox, hx, nx)

    for k in range(n_sub):
        if not np.any(active):
            break
        th = theta1 + k * dth
        xa = x[active]
        if order == 4:
            k1 = vel(xa, th)
            k2 = vel(np.clip(xa + 0.5 * hs * k1, lo, hi), th + 0.5 * dth)
            k3 = vel(np.clip(xa + 0.5 * hs * k2, lo, hi), th + 0.5 * dth)
            k4 = vel(np.clip(xa + hs * k3, lo, hi), th + dth)
            xn = xa + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        else:
            k1 = vel(xa, th)
            k2 = vel(np.clip(xa + 0.5 * hs * k1, lo, hi), th + 0.5 * dth)
            xn = xa + hs * k2
        idx = np.nonzero(active)[0]
        for side, bound, is_out in ((0, lo, xn < lo), (1, hi, xn > hi)):
            crossed = is_out
            if not np.any(crossed):
                continue
            ci = idx[crossed]
            if modes[side] == 1:
                denom = xa[crossed] - xn[crossed]
                fc = np.where(np.abs(denom) > 0, (xa[crossed] - bound) / denom, 1.0)
                exit_side[ci] = side
                exit_frac[ci] = (k + np.clip(fc, 0.0, 1.0)) / n_sub
                feet[ci] = bound
                active[ci] = False
            xn = np.where(crossed, bound, xn)
        still = active[idx]
        x[idx[still]] = xn[still]
    feet[active] = x[active]
    return feet, exit_side, exit_frac


def backtrace_2d(vx0, vx1, vy0, vy1, xq, yq, theta1, theta0, dt_total, n_sub,
                 order, ox, hx, nx, oy, hy, ny, modes):
    m = xq.shape[0]
    x = xq.copy()
    y = yq.copy()
    feet_x = xq.copy()
    feet_y = yq.copy()
    exit_side = np.full(m, -1, dtype=np.int32)
    exit_frac = np.zeros(m)
    active = np.ones(m, dtype=bool)
    lox, hix = ox, ox + nx * hx
    loy, hiy = oy, oy + ny * hy
    hs = -dt_total / n_sub
    dth = (theta0 - theta1) / n_sub

    def vel(xs, ys, th):
        xs = np.clip(xs, lox, hix)
        ys = np.clip(ys, loy, hiy)
        vxa = (1.0 - th) * _mac_interp_x(vx0, xs, ys, ox, hx, nx, oy, hy, ny) \
            + th * _mac_interp_x(vx1, xs, ys, ox, hx, nx, oy, hy, ny)
        vya = (1.0 - th) * _mac_interp_y(vy0, xs, ys, ox, hx, nx, oy, hy, ny) \
            + th * _mac_interp_y(vy1, xs, ys, ox, hx, nx, oy, hy, ny)
        return vxa, vya

    for k in range(n_sub):
        if not np.any(active):
            break
        th = theta1 + k * dth
        idx = np.nonzero(active)[0]
        xa, ya = x[idx], y[idx]
        if order == 4:
            k1x, k1y = vel(xa, ya, th)
            k2x, k2y = vel(xa + 0.5 * hs * k1x, ya + 0.5 * hs * k1y, th + 0.5 * dth)
            k3x, k3y = vel(xa + 0.5 * hs * k2x, ya + 0.5 * hs * k2y, th + 0.5 * dth)
            k4x, k4y = vel(xa + hs * k3x, ya + hs * k3y, th + dth)
            xn = xa + hs / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            yn = ya + hs / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
        else:
            k1x, k1y = vel(xa, ya, th)
            k2x, k2y = vel(xa + 0.5 * hs * k1x, ya + 0.5 * hs * k1y, th + 0.5 * dth)
            xn = xa + hs * k2x
            yn = ya + hs * k2y

        # crossing fractions per side; earliest crossing wins
        fr = np.full((4, xa.shape[0]), 2.0)
        for side, a, an, bound in ((0, xa, xn, lox), (1, xa, xn, hix),
                                   (2, ya, yn, loy), (3, ya, yn, hiy)):
            out = (an < bound) if side in (0, 2) else (an > bound)
            if modes[side] == 1 and np.any(out):
                denom = a - an
                f = np.where(np.abs(denom) > 0, (a - bound) / denom, 1.0)
                fr[side] = np.where(out, np.clip(f, 0.0, 1.0), 2.0)
        first = np.argmin(fr, axis=0)
        fmin = fr[first, np.arange(xa.shape[0])]
        exited = fmin <= 1.0
        if np.any(exited):
            ce = idx[exited]
            fce = fmin[exited]
            ex = xa[exited] + fce * (xn[exited] - xa[exited])
            ey = ya[exited] + fce * (yn[exited] - ya[exited])
            side_e = first[exited]
            ex = np.where(side_e == 0, lox, ex)
            ex = np.where(side_e == 1, hix, ex)
            ey = np.where(side_e == 2, loy, ey)
            ey = np.where(side_e == 3, hiy, ey)
            exit_side[ce] = side_e.astype(np.int32)
            exit_frac[ce] = (k + fce) / n_sub
            feet_x[ce] = np.clip(ex, lox, hix)
            feet_y[ce] = np.clip(ey, loy, hiy)
            active[ce] = False
        keep = ~exited
        x[idx[keep]] = np.clip(xn[keep], lox, hix)
        y[idx[keep]] = np.clip(yn[keep], loy, hiy)
    feet_x[active] = x[active]
    feet_y[active] = y[active]
    return feet_x, feet_y, exit_side, exit_frac
