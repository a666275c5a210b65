# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Mirrors colnmpc.kernels.pyref function by function; the parity tests
assert agreement.  Keep the two files in sync.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport tanh, exp, log, fabs

cnp.import_array()

BACKEND_NAME = "compiled"

DEF MAX_HIDDEN = 64


cdef inline double _eq(double x, double alpha) nogil:
    return alpha * x / (1.0 + (alpha - 1.0) * x)


cdef inline double _deq(double x, double alpha) nogil:
    cdef double d = 1.0 + (alpha - 1.0) * x
    return alpha / (d * d)


cdef inline double _sigmoid(double z) nogil:
    cdef double e
    if z >= 0.0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline double _logit(double x, double eps) nogil:
    cdef double c = x
    if c < eps:
        c = eps
    elif c > 1.0 - eps:
        c = 1.0 - eps
    return log(c / (1.0 - c))


cdef inline double _dlogit(double x, double eps) nogil:
    if x <= eps or x >= 1.0 - eps:
        return 0.0
    return 1.0 / (x * (1.0 - x))


def equilibrium(x, double alpha):
    cdef cnp.ndarray[double, ndim=1] xv, out
    cdef Py_ssize_t i, n
    if isinstance(x, np.ndarray) and x.ndim > 0:
        xv = np.ascontiguousarray(x, dtype=np.float64)
        n = xv.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = _eq(xv[i], alpha)
        return out
    return _eq(float(x), alpha)


def equilibrium_deriv(x, double alpha):
    cdef cnp.ndarray[double, ndim=1] xv, out
    cdef Py_ssize_t i, n
    if isinstance(x, np.ndarray) and x.ndim > 0:
        xv = np.ascontiguousarray(x, dtype=np.float64)
        n = xv.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = _deq(xv[i], alpha)
        return out
    return _deq(float(x), alpha)


def inverse_equilibrium(y, double alpha):
    cdef cnp.ndarray[double, ndim=1] yv, out
    cdef Py_ssize_t i, n
    if isinstance(y, np.ndarray) and y.ndim > 0:
        yv = np.ascontiguousarray(y, dtype=np.float64)
        n = yv.shape[0]
        out = np.empty(n)
        for i in range(n):
            out[i] = yv[i] / (alpha - (alpha - 1.0) * yv[i])
        return out
    return float(y) / (alpha - (alpha - 1.0) * float(y))


# ---------------------------------------------------------------------------
# Full-order stagewise model
# ---------------------------------------------------------------------------

def full_rhs(object x, double L, double V, double F, double x_F,
             double alpha, object holdup, Py_ssize_t feed_idx):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] hv = np.ascontiguousarray(holdup, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef cnp.ndarray[double, ndim=1] f = np.empty(n)
    cdef Py_ssize_t i
    cdef double LF = L + F
    cdef double yi, yim, acc, Ls
    f[0] = (LF * (xv[1] - xv[0]) + V * (xv[0] - _eq(xv[0], alpha))) / hv[0]
    yim = _eq(xv[0], alpha)
    for i in range(1, n - 1):
        yi = _eq(xv[i], alpha)
        if i == feed_idx:
            acc = L * (xv[i + 1] - xv[i]) + V * (yim - yi) + F * (x_F - xv[i])
        else:
            Ls = LF if i < feed_idx else L
            acc = Ls * (xv[i + 1] - xv[i]) + V * (yim - yi)
        f[i] = acc / hv[i]
        yim = yi
    f[n - 1] = V * (yim - xv[n - 1]) / hv[n - 1]
    return f


def full_state_jac(object x, double L, double V, double F,
                   double alpha, object holdup, Py_ssize_t feed_idx):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] hv = np.ascontiguousarray(holdup, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef cnp.ndarray[double, ndim=2] J = np.zeros((n, n))
    cdef Py_ssize_t i
    cdef double LF = L + F
    cdef double Ls, extra
    J[0, 0] = (-LF + V * (1.0 - _deq(xv[0], alpha))) / hv[0]
    J[0, 1] = LF / hv[0]
    for i in range(1, n - 1):
        if i == feed_idx:
            Ls = L
            extra = F
        else:
            Ls = LF if i < feed_idx else L
            extra = 0.0
        J[i, i - 1] = V * _deq(xv[i - 1], alpha) / hv[i]
        J[i, i] = (-Ls - V * _deq(xv[i], alpha) - extra) / hv[i]
        J[i, i + 1] = Ls / hv[i]
    J[n - 1, n - 2] = V * _deq(xv[n - 2], alpha) / hv[n - 1]
    J[n - 1, n - 1] = -V / hv[n - 1]
    return J


def full_input_jac(object x, double L, double V, double F,
                   double alpha, object holdup, Py_ssize_t feed_idx):
    cdef cnp.ndarray[double, ndim=1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] hv = np.ascontiguousarray(holdup, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    cdef cnp.ndarray[double, ndim=2] G = np.zeros((n, 2))
    cdef Py_ssize_t i
    G[0, 0] = (xv[1] - xv[0]) / hv[0]
    G[0, 1] = (xv[0] - _eq(xv[0], alpha)) / hv[0]
    for i in range(1, n - 1):
        G[i, 0] = (xv[i + 1] - xv[i]) / hv[i]
        G[i, 1] = (_eq(xv[i - 1], alpha) - _eq(xv[i], alpha)) / hv[i]
    G[n - 1, 0] = 0.0
    G[n - 1, 1] = (_eq(xv[n - 2], alpha) - xv[n - 1]) / hv[n - 1]
    return G


# ---------------------------------------------------------------------------
# Stationary section chain
# ---------------------------------------------------------------------------

cdef void _section_residual(double* xs, double x_up, double y_lo, double r,
                            Py_ssize_t m, double alpha, double* res) nogil:
    cdef Py_ssize_t t
    cdef double x_above, y_below
    for t in range(m):
        x_above = x_up if t == 0 else xs[t - 1]
        y_below = y_lo if t == m - 1 else _eq(xs[t + 1], alpha)
        res[t] = r * (x_above - xs[t]) + (y_below - _eq(xs[t], alpha))


def section_chain_solve(double x_up, double y_lo, double r, Py_ssize_t m,
                        double alpha, double tol=1e-12, int max_iter=60):
    cdef cnp.ndarray[double, ndim=1] xs_arr = np.empty(max(m, 1))
    if m == 0:
        return np.empty(0), 0, 0.0
    cdef cnp.ndarray[double, ndim=1] res_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] trial_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] rt_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] diag_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] upper_arr = np.empty(m)
    cdef cnp.ndarray[double, ndim=1] step_arr = np.empty(m)
    cdef double* xs = &xs_arr[0]
    cdef double* res = &res_arr[0]
    cdef double* trial = &trial_arr[0]
    cdef double* rt = &rt_arr[0]
    cdef double* diag = &diag_arr[0]
    cdef double* upper = &upper_arr[0]
    cdef double* step = &step_arr[0]
    cdef Py_ssize_t t, it
    cdef double x_lo_guess, rnorm, rn_t, lam, w, dyt, v
    cdef int niter = 0

    x_lo_guess = y_lo / (alpha - (alpha - 1.0) * y_lo)
    for t in range(m):
        v = x_up + ((t + 1.0) / (m + 1.0)) * (x_lo_guess - x_up)
        if v < 0.0:
            v = 0.0
        elif v > 1.0:
            v = 1.0
        xs[t] = v

    _section_residual(xs, x_up, y_lo, r, m, alpha, res)
    rnorm = 0.0
    for t in range(m):
        if fabs(res[t]) > rnorm:
            rnorm = fabs(res[t])

    while rnorm > tol and niter < max_iter:
        # tridiagonal Newton system (Thomas elimination in place)
        for t in range(m):
            diag[t] = -r - _deq(xs[t], alpha)
            step[t] = -res[t]
            if t < m - 1:
                upper[t] = _deq(xs[t + 1], alpha)
        for t in range(1, m):
            w = r / diag[t - 1]
            diag[t] -= w * upper[t - 1]
            step[t] -= w * step[t - 1]
        step[m - 1] = step[m - 1] / diag[m - 1]
        for t in range(m - 2, -1, -1):
            step[t] = (step[t] - upper[t] * step[t + 1]) / diag[t]
        lam = 1.0
        while True:
            for t in range(m):
                v = xs[t] + lam * step[t]
                if v < 0.0:
                    v = 0.0
                elif v > 1.0:
                    v = 1.0
                trial[t] = v
            _section_residual(trial, x_up, y_lo, r, m, alpha, rt)
            rn_t = 0.0
            for t in range(m):
                if fabs(rt[t]) > rn_t:
                    rn_t = fabs(rt[t])
            if rn_t < rnorm or lam < 1e-8:
                break
            lam *= 0.5
        for t in range(m):
            xs[t] = trial[t]
            res[t] = rt[t]
        rnorm = rn_t
        niter += 1
    return xs_arr[:m], niter, rnorm


# ---------------------------------------------------------------------------
# Hybrid stage-aggregation model with packed ANN surrogates
# ---------------------------------------------------------------------------

def hybrid_rhs_jac(object z_in, double L, double V, double F, double x_F,
                   double alpha, object m_hold_in, object net_in,
                   object net_off_in, object hidden_in, object r_lo_in,
                   object r_hi_in, double eps, int want_jac):
    cdef cnp.ndarray[double, ndim=1] z = np.ascontiguousarray(z_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] m_hold = np.ascontiguousarray(m_hold_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] net = np.ascontiguousarray(net_in, dtype=np.float64)
    cdef cnp.ndarray[long long, ndim=1] net_off = np.ascontiguousarray(net_off_in, dtype=np.int64)
    cdef cnp.ndarray[long long, ndim=1] hidden = np.ascontiguousarray(hidden_in, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] r_lo = np.ascontiguousarray(r_lo_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] r_hi = np.ascontiguousarray(r_hi_in, dtype=np.float64)

    cdef cnp.ndarray[double, ndim=1] f = np.zeros(5)
    cdef cnp.ndarray[double, ndim=2] Jz
    cdef cnp.ndarray[double, ndim=2] Ju

    cdef double xb[4]
    cdef double yt[4]
    cdef double dxb[4][4]
    cdef double dyt[4][4]
    cdef double act[MAX_HIDDEN]
    cdef int up_idx[4]
    cdef int lo_idx[4]
    cdef int strip[4]
    up_idx[0] = 4; up_idx[1] = 3; up_idx[2] = 2; up_idx[3] = 1
    lo_idx[0] = 3; lo_idx[1] = 2; lo_idx[2] = 1; lo_idx[3] = 0
    strip[0] = 0; strip[1] = 0; strip[2] = 1; strip[3] = 1

    cdef int n_clamped = 0
    cdef Py_ssize_t k, i, off, h
    cdef double zu, zl, yl, dyl, Ls, r, s0, s1, s2, zeta, xbk
    cdef double g0, g1, g2, gw, sig, du, dl, dr
    cdef double LF = L + F
    cdef bint clamped

    for k in range(4):
        zu = z[up_idx[k]]
        zl = z[lo_idx[k]]
        yl = _eq(zl, alpha)
        dyl = _deq(zl, alpha)
        Ls = LF if strip[k] else L
        r = Ls / V
        s0 = _logit(zu, eps)
        s1 = _logit(yl, eps)
        s2 = 2.0 * (r - r_lo[k]) / (r_hi[k] - r_lo[k]) - 1.0
        off = net_off[k]
        h = hidden[k]
        zeta = net[off + 5 * h]  # output bias
        g0 = 0.0
        g1 = 0.0
        g2 = 0.0
        for i in range(h):
            act[i] = tanh(net[off + 3 * i] * s0 + net[off + 3 * i + 1] * s1
                          + net[off + 3 * i + 2] * s2 + net[off + 3 * h + i])
            zeta += net[off + 4 * h + i] * act[i]
        xbk = _sigmoid(zeta)
        clamped = xbk < eps or xbk > 1.0 - eps
        if clamped:
            if xbk < eps:
                xbk = eps
            elif xbk > 1.0 - eps:
                xbk = 1.0 - eps
            n_clamped += 1
        xb[k] = xbk
        yt[k] = yl + r * (zu - xbk)
        if want_jac:
            if clamped:
                du = 0.0
                dl = 0.0
                dr = 0.0
            else:
                for i in range(h):
                    gw = net[off + 4 * h + i] * (1.0 - act[i] * act[i])
                    g0 += gw * net[off + 3 * i]
                    g1 += gw * net[off + 3 * i + 1]
                    g2 += gw * net[off + 3 * i + 2]
                sig = xbk * (1.0 - xbk)
                du = sig * g0 * _dlogit(zu, eps)
                dl = sig * g1 * _dlogit(yl, eps) * dyl
                dr = sig * g2 * 2.0 / (r_hi[k] - r_lo[k])
            dxb[k][0] = du
            dxb[k][1] = dl
            dxb[k][2] = dr / V
            dxb[k][3] = -dr * r / V
            dyt[k][0] = r * (1.0 - du)
            dyt[k][1] = dyl - r * dl
            dyt[k][2] = (zu - xbk) / V - r * dxb[k][2]
            dyt[k][3] = -r * (zu - xbk) / V - r * dxb[k][3]

    cdef double y0 = _eq(z[0], alpha)
    cdef double y1 = _eq(z[1], alpha)
    cdef double y2 = _eq(z[2], alpha)
    cdef double y3 = _eq(z[3], alpha)
    cdef double dy0 = _deq(z[0], alpha)
    cdef double dy1 = _deq(z[1], alpha)
    cdef double dy2 = _deq(z[2], alpha)
    cdef double dy3 = _deq(z[3], alpha)

    f[4] = V * (yt[0] - z[4]) / m_hold[4]
    f[3] = (L * (xb[0] - z[3]) + V * (yt[1] - y3)) / m_hold[3]
    f[2] = (L * (xb[1] - z[2]) + V * (yt[2] - y2) + F * (x_F - z[2])) / m_hold[2]
    f[1] = (LF * (xb[2] - z[1]) + V * (yt[3] - y1)) / m_hold[1]
    f[0] = (LF * (xb[3] - z[0]) + V * (z[0] - y0)) / m_hold[0]

    if not want_jac:
        return f, None, None, n_clamped

    Jz = np.zeros((5, 5))
    Ju = np.zeros((5, 2))

    Jz[4, 4] = V * (dyt[0][0] - 1.0) / m_hold[4]
    Jz[4, 3] = V * dyt[0][1] / m_hold[4]

    Jz[3, 4] = L * dxb[0][0] / m_hold[3]
    Jz[3, 3] = (L * (dxb[0][1] - 1.0) + V * (dyt[1][0] - dy3)) / m_hold[3]
    Jz[3, 2] = V * dyt[1][1] / m_hold[3]

    Jz[2, 3] = L * dxb[1][0] / m_hold[2]
    Jz[2, 2] = (L * (dxb[1][1] - 1.0) + V * (dyt[2][0] - dy2) - F) / m_hold[2]
    Jz[2, 1] = V * dyt[2][1] / m_hold[2]

    Jz[1, 2] = LF * dxb[2][0] / m_hold[1]
    Jz[1, 1] = (LF * (dxb[2][1] - 1.0) + V * (dyt[3][0] - dy1)) / m_hold[1]
    Jz[1, 0] = V * dyt[3][1] / m_hold[1]

    Jz[0, 1] = LF * dxb[3][0] / m_hold[0]
    Jz[0, 0] = (LF * (dxb[3][1] - 1.0) + V * (1.0 - dy0)) / m_hold[0]

    Ju[4, 0] = V * dyt[0][2] / m_hold[4]
    Ju[4, 1] = ((yt[0] - z[4]) + V * dyt[0][3]) / m_hold[4]

    Ju[3, 0] = ((xb[0] - z[3]) + L * dxb[0][2] + V * dyt[1][2]) / m_hold[3]
    Ju[3, 1] = (L * dxb[0][3] + (yt[1] - y3) + V * dyt[1][3]) / m_hold[3]

    Ju[2, 0] = ((xb[1] - z[2]) + L * dxb[1][2] + V * dyt[2][2]) / m_hold[2]
    Ju[2, 1] = (L * dxb[1][3] + (yt[2] - y2) + V * dyt[2][3]) / m_hold[2]

    Ju[1, 0] = ((xb[2] - z[1]) + LF * dxb[2][2] + V * dyt[3][2]) / m_hold[1]
    Ju[1, 1] = (LF * dxb[2][3] + (yt[3] - y1) + V * dyt[3][3]) / m_hold[1]

    Ju[0, 0] = ((xb[3] - z[0]) + LF * dxb[3][2]) / m_hold[0]
    Ju[0, 1] = (LF * dxb[3][3] + (z[0] - y0)) / m_hold[0]

    return f, Jz, Ju, n_clamped
