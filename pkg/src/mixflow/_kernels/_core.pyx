# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Must stay semantically identical to ``pure.py``; the test suite compares
the two backends on random inputs.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

NAME = "compiled"


def thomas_solve(double[::1] dl, double[::1] d, double[::1] du, double[::1] b):
    """Tridiagonal solve without pivoting (diagonally dominant systems)."""
    cdef Py_ssize_t n = d.shape[0]
    cdef cnp.ndarray[double, ndim=1] x_arr = np.empty(n)
    cdef double[::1] x = x_arr
    cdef cnp.ndarray[double, ndim=1] cp_arr = np.empty(n)
    cdef double[::1] cp = cp_arr
    cdef cnp.ndarray[double, ndim=1] dp_arr = np.empty(n)
    cdef double[::1] dp = dp_arr
    cdef Py_ssize_t i
    cdef double m
    cp[0] = du[0] / d[0]
    dp[0] = b[0] / d[0]
    for i in range(1, n):
        m = d[i] - dl[i] * cp[i - 1]
        cp[i] = du[i] / m if i < n - 1 else 0.0
        dp[i] = (b[i] - dl[i] * dp[i - 1]) / m
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x_arr


def matvec_1d(double[::1] x, double[::1] diag, double coef, double ihx2, int[::1] bc):
    cdef Py_ssize_t n = x.shape[0]
    cdef cnp.ndarray[double, ndim=1] y_arr = np.empty(n)
    cdef double[::1] y = y_arr
    cdef Py_ssize_t i
    cdef double f
    for i in range(n):
        y[i] = diag[i] * x[i]
    for i in range(1, n):
        f = coef * ihx2 * (x[i] - x[i - 1])
        y[i] += f
        y[i - 1] -= f
    if bc[0] == 1:
        y[0] += coef * ihx2 * 2.0 * x[0]
    if bc[1] == 1:
        y[n - 1] += coef * ihx2 * 2.0 * x[n - 1]
    return y_arr


def matvec_2d(double[:, ::1] x, double[:, ::1] diag, double coef,
              double ihx2, double ihy2, int[::1] bc):
    cdef Py_ssize_t nx = x.shape[0], ny = x.shape[1]
    cdef cnp.ndarray[double, ndim=2] y_arr = np.empty((nx, ny))
    cdef double[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double f
    for i in range(nx):
        for j in range(ny):
            y[i, j] = diag[i, j] * x[i, j]
    for i in range(1, nx):
        for j in range(ny):
            f = coef * ihx2 * (x[i, j] - x[i - 1, j])
            y[i, j] += f
            y[i - 1, j] -= f
    for i in range(nx):
        for j in range(1, ny):
            f = coef * ihy2 * (x[i, j] - x[i, j - 1])
            y[i, j] += f
            y[i, j - 1] -= f
    if bc[0] == 1:
        for j in range(ny):
            y[0, j] += coef * ihx2 * 2.0 * x[0, j]
    if bc[1] == 1:
        for j in range(ny):
            y[nx - 1, j] += coef * ihx2 * 2.0 * x[nx - 1, j]
    if bc[2] == 1:
        for i in range(nx):
            y[i, 0] += coef * ihy2 * 2.0 * x[i, 0]
    if bc[3] == 1:
        for i in range(nx):
            y[i, ny - 1] += coef * ihy2 * 2.0 * x[i, ny - 1]
    return y_arr


cdef inline void _axis_weight(double q, double lo, double h, Py_ssize_t n,
                              int mode_lo, int mode_hi,
                              Py_ssize_t* j0_out, double* lam_out) nogil:
    cdef double hi = lo + n * h
    cdef double qc = q
    cdef double s, lam
    cdef Py_ssize_t j0
    if qc < lo:
        qc = lo
    elif qc > hi:
        qc = hi
    s = (qc - lo) / h - 0.5
    j0 = <Py_ssize_t> floor(s)
    lam = s - j0
    if j0 < 0:
        j0 = 0
        lam = 0.0 if mode_lo == 0 else s
    elif j0 > n - 2:
        j0 = n - 2
        lam = 1.0 if mode_hi == 0 else s - (n - 2)
    # snap roundoff-level offsets so sampling at cell centers is exact
    if lam < 1e-12 and lam > -1e-12:
        lam = 0.0
    elif lam < 1.0 + 1e-12 and lam > 1.0 - 1e-12:
        lam = 1.0
    j0_out[0] = j0
    lam_out[0] = lam


def sample_1d(double[:, ::1] values, double[::1] q, double ox, double hx,
              Py_ssize_t nx, int mode_l, int mode_r):
    cdef Py_ssize_t k = values.shape[0], m = q.shape[0]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.empty((k, m))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, p, j0
    cdef double lam
    for p in range(m):
        _axis_weight(q[p], ox, hx, nx, mode_l, mode_r, &j0, &lam)
        for c in range(k):
            out[c, p] = values[c, j0] * (1.0 - lam) + values[c, j0 + 1] * lam
    return out_arr


def sample_2d(double[:, :, ::1] values, double[::1] qx, double[::1] qy,
              double ox, double hx, Py_ssize_t nx,
              double oy, double hy, Py_ssize_t ny, int[::1] modes):
    cdef Py_ssize_t k = values.shape[0], m = qx.shape[0]
    cdef cnp.ndarray[double, ndim=2] out_arr = np.empty((k, m))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t c, p, i0, j0
    cdef double lx, ly
    for p in range(m):
        _axis_weight(qx[p], ox, hx, nx, modes[0], modes[1], &i0, &lx)
        _axis_weight(qy[p], oy, hy, ny, modes[2], modes[3], &j0, &ly)
        for c in range(k):
            out[c, p] = (
                values[c, i0, j0] * (1 - lx) * (1 - ly)
                + values[c, i0 + 1, j0] * lx * (1 - ly)
                + values[c, i0, j0 + 1] * (1 - lx) * ly
                + values[c, i0 + 1, j0 + 1] * lx * ly
            )
    return out_arr


cdef inline double _face_1d(double[::1] vf, double x, double ox, double hx,
                            Py_ssize_t nx) nogil:
    cdef double s = (x - ox) / hx
    cdef Py_ssize_t i0
    cdef double lam
    if s < 0.0:
        s = 0.0
    elif s > nx:
        s = nx
    i0 = <Py_ssize_t> s
    if i0 > nx - 1:
        i0 = nx - 1
    lam = s - i0
    return vf[i0] * (1.0 - lam) + vf[i0 + 1] * lam


cdef inline double _mac_x(double[:, ::1] vf, double x, double y,
                          double ox, double hx, Py_ssize_t nx,
                          double oy, double hy, Py_ssize_t ny) nogil:
    cdef double sx = (x - ox) / hx
    cdef double sy = (y - oy) / hy - 0.5
    cdef Py_ssize_t i0, j0
    cdef double lx, ly
    if sx < 0.0:
        sx = 0.0
    elif sx > nx:
        sx = nx
    i0 = <Py_ssize_t> sx
    if i0 > nx - 1:
        i0 = nx - 1
    lx = sx - i0
    if sy < 0.0:
        sy = 0.0
    elif sy > ny - 1:
        sy = ny - 1
    j0 = <Py_ssize_t> sy
    if j0 > ny - 2:
        j0 = ny - 2
    ly = sy - j0
    return (vf[i0, j0] * (1 - lx) * (1 - ly) + vf[i0 + 1, j0] * lx * (1 - ly)
            + vf[i0, j0 + 1] * (1 - lx) * ly + vf[i0 + 1, j0 + 1] * lx * ly)


cdef inline double _mac_y(double[:, ::1] vf, double x, double y,
                          double ox, double hx, Py_ssize_t nx,
                          double oy, double hy, Py_ssize_t ny) nogil:
    cdef double sy = (y - oy) / hy
    cdef double sx = (x - ox) / hx - 0.5
    cdef Py_ssize_t i0, j0
    cdef double lx, ly
    if sy < 0.0:
        sy = 0.0
    elif sy > ny:
        sy = ny
    j0 = <Py_ssize_t> sy
    if j0 > ny - 1:
        j0 = ny - 1
    ly = sy - j0
    if sx < 0.0:
        sx = 0.0
    elif sx > nx - 1:
        sx = nx - 1
    i0 = <Py_ssize_t> sx
    if i0 > nx - 2:
        i0 = nx - 2
    lx = sx - i0
    return (vf[i0, j0] * (1 - lx) * (1 - ly) + vf[i0 + 1, j0] * lx * (1 - ly)
            + vf[i0, j0 + 1] * (1 - lx) * ly + vf[i0 + 1, j0 + 1] * lx * ly)


def backtrace_1d(double[::1] vx0, double[::1] vx1, double[::1] xq,
                 double theta1, double theta0, double dt_total,
                 int n_sub, int order, double ox, double hx, Py_ssize_t nx,
                 int[::1] modes):
    cdef Py_ssize_t m = xq.shape[0]
    cdef cnp.ndarray[double, ndim=1] feet_arr = np.empty(m)
    cdef cnp.ndarray[int, ndim=1] side_arr = np.full(m, -1, dtype=np.int32)
    cdef cnp.ndarray[double, ndim=1] frac_arr = np.zeros(m)
    cdef double[::1] feet = feet_arr
    cdef int[::1] side = side_arr
    cdef double[::1] frac = frac_arr
    cdef double lo = ox, hi = ox + nx * hx
    cdef double hs = -dt_total / n_sub
    cdef double dth = (theta0 - theta1) / n_sub
    cdef Py_ssize_t p
    cdef int k
    cdef double x, th, k1, k2, k3, k4, xs, xn, fc, denom
    cdef bint done
    for p in range(m):
        x = xq[p]
        done = False
        for k in range(n_sub):
            th = theta1 + k * dth
            k1 = (1.0 - th) * _face_1d(vx0, x, ox, hx, nx) + th * _face_1d(vx1, x, ox, hx, nx)
            xs = x + 0.5 * hs * k1
            if xs < lo:
                xs = lo
            elif xs > hi:
                xs = hi
            k2 = ((1.0 - (th + 0.5 * dth)) * _face_1d(vx0, xs, ox, hx, nx)
                  + (th + 0.5 * dth) * _face_1d(vx1, xs, ox, hx, nx))
            if order == 4:
                xs = x + 0.5 * hs * k2
                if xs < lo:
                    xs = lo
                elif xs > hi:
                    xs = hi
                k3 = ((1.0 - (th + 0.5 * dth)) * _face_1d(vx0, xs, ox, hx, nx)
                      + (th + 0.5 * dth) * _face_1d(vx1, xs, ox, hx, nx))
                xs = x + hs * k3
                if xs < lo:
                    xs = lo
                elif xs > hi:
                    xs = hi
                k4 = ((1.0 - (th + dth)) * _face_1d(vx0, xs, ox, hx, nx)
                      + (th + dth) * _face_1d(vx1, xs, ox, hx, nx))
                xn = x + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            else:
                xn = x + hs * k2
            if xn < lo:
                if modes[0] == 1:
                    denom = x - xn
                    fc = (x - lo) / denom if denom != 0.0 else 1.0
                    if fc < 0.0:
                        fc = 0.0
                    elif fc > 1.0:
                        fc = 1.0
                    side[p] = 0
                    frac[p] = (k + fc) / n_sub
                    feet[p] = lo
                    done = True
                    break
                xn = lo
            elif xn > hi:
                if modes[1] == 1:
                    denom = x - xn
                    fc = (x - hi) / denom if denom != 0.0 else 1.0
                    if fc < 0.0:
                        fc = 0.0
                    elif fc > 1.0:
                        fc = 1.0
                    side[p] = 1
                    frac[p] = (k + fc) / n_sub
                    feet[p] = hi
                    done = True
                    break
                xn = hi
            x = xn
        if not done:
            feet[p] = x
    return feet_arr, side_arr, frac_arr


def backtrace_2d(double[:, ::1] vx0, double[:, ::1] vx1,
                 double[:, ::1] vy0, double[:, ::1] vy1,
                 double[::1] xq, double[::1] yq,
                 double theta1, double theta0, double dt_total,
                 int n_sub, int order,
                 double ox, double hx, Py_ssize_t nx,
                 double oy, double hy, Py_ssize_t ny, int[::1] modes):
    cdef Py_ssize_t m = xq.shape[0]
    cdef cnp.ndarray[double, ndim=1] fx_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] fy_arr = np.empty(m)
    cdef cnp.ndarray[int, ndim=1] side_arr = np.full(m, -1, dtype=np.int32)
    cdef cnp.ndarray[double, ndim=1] frac_arr = np.zeros(m)
    cdef double[::1] fx = fx_arr
    cdef double[::1] fy = fy_arr
    cdef int[::1] side = side_arr
    cdef double[::1] frac = frac_arr
    cdef double lox = ox, hix = ox + nx * hx
    cdef double loy = oy, hiy = oy + ny * hy
    cdef double hs = -dt_total / n_sub
    cdef double dth = (theta0 - theta1) / n_sub
    cdef Py_ssize_t p
    cdef int k, s, best
    cdef double x, y, th, xn, yn, fmin, ex, ey
    cdef double fr[4]
    cdef bint done
    for p in range(m):
        x = xq[p]
        y = yq[p]
        done = False
        for k in range(n_sub):
            th = theta1 + k * dth
            _stages_2d(vx0, vx1, vy0, vy1, x, y, th, dth, hs, order,
                       ox, hx, nx, oy, hy, ny, lox, hix, loy, hiy, &xn, &yn)
            fr[0] = 2.0
            fr[1] = 2.0
            fr[2] = 2.0
            fr[3] = 2.0
            if xn < lox and modes[0] == 1:
                fr[0] = _cross_frac(x, xn, lox)
            if xn > hix and modes[1] == 1:
                fr[1] = _cross_frac(x, xn, hix)
            if yn < loy and modes[2] == 1:
                fr[2] = _cross_frac(y, yn, loy)
            if yn > hiy and modes[3] == 1:
                fr[3] = _cross_frac(y, yn, hiy)
            best = 0
            fmin = fr[0]
            for s in range(1, 4):
                if fr[s] < fmin:
                    fmin = fr[s]
                    best = s
            if fmin <= 1.0:
                ex = x + fmin * (xn - x)
                ey = y + fmin * (yn - y)
                if best == 0:
                    ex = lox
                elif best == 1:
                    ex = hix
                elif best == 2:
                    ey = loy
                else:
                    ey = hiy
                if ex < lox:
                    ex = lox
                elif ex > hix:
                    ex = hix
                if ey < loy:
                    ey = loy
                elif ey > hiy:
                    ey = hiy
                side[p] = best
                frac[p] = (k + fmin) / n_sub
                fx[p] = ex
                fy[p] = ey
                done = True
                break
            if xn < lox:
                xn = lox
            elif xn > hix:
                xn = hix
            if yn < loy:
                yn = loy
            elif yn > hiy:
                yn = hiy
            x = xn
            y = yn
        if not done:
            fx[p] = x
            fy[p] = y
    return fx_arr, fy_arr, side_arr, frac_arr


cdef inline double _cross_frac(double a, double an, double bound) nogil:
    cdef double denom = a - an
    cdef double f
    if denom != 0.0:
        f = (a - bound) / denom
    else:
        f = 1.0
    if f < 0.0:
        f = 0.0
    elif f > 1.0:
        f = 1.0
    return f


cdef inline void _stages_2d(double[:, ::1] vx0, double[:, ::1] vx1,
                            double[:, ::1] vy0, double[:, ::1] vy1,
                            double x, double y, double th, double dth,
                            double hs, int order,
                            double ox, double hx, Py_ssize_t nx,
                            double oy, double hy, Py_ssize_t ny,
                            double lox, double hix, double loy, double hiy,
                            double* xn, double* yn) nogil:
    cdef double k1x, k1y, k2x, k2y, k3x, k3y, k4x, k4y, xs, ys, thm
    _vel_2d(vx0, vx1, vy0, vy1, x, y, th, ox, hx, nx, oy, hy, ny,
            lox, hix, loy, hiy, &k1x, &k1y)
    thm = th + 0.5 * dth
    xs = x + 0.5 * hs * k1x
    ys = y + 0.5 * hs * k1y
    _vel_2d(vx0, vx1, vy0, vy1, xs, ys, thm, ox, hx, nx, oy, hy, ny,
            lox, hix, loy, hiy, &k2x, &k2y)
    if order == 4:
        xs = x + 0.5 * hs * k2x
        ys = y + 0.5 * hs * k2y
        _vel_2d(vx0, vx1, vy0, vy1, xs, ys, thm, ox, hx, nx, oy, hy, ny,
                lox, hix, loy, hiy, &k3x, &k3y)
        xs = x + hs * k3x
        ys = y + hs * k3y
        _vel_2d(vx0, vx1, vy0, vy1, xs, ys, th + dth, ox, hx, nx, oy, hy, ny,
                lox, hix, loy, hiy, &k4x, &k4y)
        xn[0] = x + hs / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        yn[0] = y + hs / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
    else:
        xn[0] = x + hs * k2x
        yn[0] = y + hs * k2y


cdef inline void _vel_2d(double[:, ::1] vx0, double[:, ::1] vx1,
                         double[:, ::1] vy0, double[:, ::1] vy1,
                         double x, double y, double th,
                         double ox, double hx, Py_ssize_t nx,
                         double oy, double hy, Py_ssize_t ny,
                         double lox, double hix, double loy, double hiy,
                         double* vx, double* vy) nogil:
    if x < lox:
        x = lox
    elif x > hix:
        x = hix
    if y < loy:
        y = loy
    elif y > hiy:
        y = hiy
    vx[0] = ((1.0 - th) * _mac_x(vx0, x, y, ox, hx, nx, oy, hy, ny)
             + th * _mac_x(vx1, x, y, ox, hx, nx, oy, hy, ny))
    vy[0] = ((1.0 - th) * _mac_y(vy0, x, y, ox, hx, nx, oy, hy, ny)
             + th * _mac_y(vy1, x, y, ox, hx, nx, oy, hy, ny))
