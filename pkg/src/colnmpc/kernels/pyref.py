"""Reference numpy implementation of the hot kernels.

Semantics ground truth for the compiled core (``_fast.pyx``).  Every
function here has a bit-compatible signature in the Cython module; the
parity test suite asserts both backends agree to tight tolerances.

Stage indexing convention (used everywhere in this package):
index 0 = reboiler, index n-1 = condenser, liquid flows toward index 0,
vapor toward index n-1.  The hybrid state is ordered bottom-up over the
five aggregation stages: [reboiler, lower mid stage, feed stage, upper
mid stage, condenser].
"""

import numpy as np

BACKEND_NAME = "python"

# Sections of the hybrid model, top-down.  up/lo are hybrid-state indices
# of the bounding aggregation stages; strip marks sections below the feed
# (liquid flow L+F instead of L).
_SEC_UP = (4, 3, 2, 1)
_SEC_LO = (3, 2, 1, 0)
_SEC_STRIP = (False, False, True, True)


def equilibrium(x, alpha):
    """Vapor mole fraction in equilibrium with liquid x, constant relative
    volatility alpha: y = alpha*x / (1 + (alpha-1)*x)."""
    x = np.asarray(x, dtype=float)
    y = alpha * x / (1.0 + (alpha - 1.0) * x)
    return y if y.ndim else float(y)


def equilibrium_deriv(x, alpha):
    """dy/dx of the equilibrium line: alpha / (1 + (alpha-1)*x)^2."""
    x = np.asarray(x, dtype=float)
    d = alpha / (1.0 + (alpha - 1.0) * x) ** 2
    return d if d.ndim else float(d)


def inverse_equilibrium(y, alpha):
    """Liquid mole fraction whose equilibrium vapor is y."""
    y = np.asarray(y, dtype=float)
    x = y / (alpha - (alpha - 1.0) * y)
    return x if x.ndim else float(x)


# ---------------------------------------------------------------------------
# Full-order stagewise model
# ---------------------------------------------------------------------------

def full_rhs(x, L, V, F, x_F, alpha, holdup, feed_idx):
    """Composition derivatives of the full-order column model.

    x        liquid mole fraction per stage, reboiler first [-]
    L, V     reflux and boilup flows [mol/s]
    F, x_F   feed flow [mol/s] and feed mole fraction [-]
    holdup   molar holdup per stage [mol]
    feed_idx 0-based feed stage index
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    y = alpha * x / (1.0 + (alpha - 1.0) * x)
    f = np.empty(n)
    LF = L + F
    # Reboiler: liquid in at L+F from tray 1, bottoms out at B, vapor out at V.
    f[0] = (LF * (x[1] - x[0]) + V * (x[0] - y[0])) / holdup[0]
    # Trays: liquid from above, vapor from below.
    for i in range(1, n - 1):
        if i == feed_idx:
            acc = L * (x[i + 1] - x[i]) + V * (y[i - 1] - y[i]) + F * (x_F - x[i])
        else:
            Ls = LF if i < feed_idx else L
            acc = Ls * (x[i + 1] - x[i]) + V * (y[i - 1] - y[i])
        f[i] = acc / holdup[i]
    # Total condenser: vapor in, reflux + distillate out at x_D.
    f[n - 1] = V * (y[n - 2] - x[n - 1]) / holdup[n - 1]
    return f


def full_state_jac(x, L, V, F, alpha, holdup, feed_idx):
    """Tridiagonal state Jacobian of full_rhs, returned dense (n, n)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    dy = alpha / (1.0 + (alpha - 1.0) * x) ** 2
    J = np.zeros((n, n))
    LF = L + F
    J[0, 0] = (-LF + V * (1.0 - dy[0])) / holdup[0]
    J[0, 1] = LF / holdup[0]
    for i in range(1, n - 1):
        Ls = L if i >= feed_idx else LF
        extra = F if i == feed_idx else 0.0
        if i == feed_idx:
            Ls = L
        J[i, i - 1] = V * dy[i - 1] / holdup[i]
        J[i, i] = (-Ls - V * dy[i] - extra) / holdup[i]
        J[i, i + 1] = Ls / holdup[i]
    J[n - 1, n - 2] = V * dy[n - 2] / holdup[n - 1]
    J[n - 1, n - 1] = -V / holdup[n - 1]
    return J


def full_input_jac(x, L, V, F, alpha, holdup, feed_idx):
    """d full_rhs / d(L, V), shape (n, 2)."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    y = alpha * x / (1.0 + (alpha - 1.0) * x)
    G = np.zeros((n, 2))
    G[0, 0] = (x[1] - x[0]) / holdup[0]
    G[0, 1] = (x[0] - y[0]) / holdup[0]
    for i in range(1, n - 1):
        G[i, 0] = (x[i + 1] - x[i]) / holdup[i]
        G[i, 1] = (y[i - 1] - y[i]) / holdup[i]
    G[n - 1, 0] = 0.0
    G[n - 1, 1] = (y[n - 2] - x[n - 1]) / holdup[n - 1]
    return G


# ---------------------------------------------------------------------------
# Stationary column section (countercurrent tray chain)
# ---------------------------------------------------------------------------

def section_chain_solve(x_up, y_lo, r, m, alpha, tol=1e-12, max_iter=60):
    """Solve the m stationary tray balances of one column section.

    Boundary conditions: liquid x_up enters the top tray, vapor y_lo the
    bottom tray; r is the section liquid-to-vapor flow ratio.  Returns
    (xs, n_iter, resid_inf) where xs[0] is the top tray and xs[m-1] the
    bottom tray.  Damped Newton on the stacked residual, tridiagonal
    Jacobian solved by the Thomas algorithm.
    """
    if m == 0:
        return np.empty(0), 0, 0.0
    x_lo_guess = inverse_equilibrium(y_lo, alpha)
    xs = x_up + (np.arange(1, m + 1) / (m + 1.0)) * (x_lo_guess - x_up)
    xs = np.clip(xs, 0.0, 1.0)

    def residual(v):
        yv = alpha * v / (1.0 + (alpha - 1.0) * v)
        x_above = np.concatenate(([x_up], v[:-1]))
        y_below = np.concatenate((yv[1:], [y_lo]))
        return r * (x_above - v) + (y_below - yv)

    res = residual(xs)
    rnorm = np.max(np.abs(res))
    it = 0
    while rnorm > tol and it < max_iter:
        dyv = alpha / (1.0 + (alpha - 1.0) * xs) ** 2
        diag = -r - dyv
        lower = np.full(m - 1, r)          # dR_t/dxs[t-1]
        upper = dyv[1:]                    # dR_t/dxs[t+1]
        step = _thomas(lower, diag.copy(), upper, -res)
        # Damped update: backtrack until the residual norm decreases.
        lam = 1.0
        while True:
            trial = np.clip(xs + lam * step, 0.0, 1.0)
            res_t = residual(trial)
            rn_t = np.max(np.abs(res_t))
            if rn_t < rnorm or lam < 1e-8:
                break
            lam *= 0.5
        xs, res, rnorm = trial, res_t, rn_t
        it += 1
    return xs, it, rnorm


def _thomas(lower, diag, upper, rhs):
    """Tridiagonal solve; diag and rhs are modified copies."""
    m = diag.shape[0]
    b = rhs.copy()
    for i in range(1, m):
        w = lower[i - 1] / diag[i - 1]
        diag[i] -= w * upper[i - 1]
        b[i] -= w * b[i - 1]
    xv = np.empty(m)
    xv[m - 1] = b[m - 1] / diag[m - 1]
    for i in range(m - 2, -1, -1):
        xv[i] = (b[i] - upper[i] * xv[i + 1]) / diag[i]
    return xv


# ---------------------------------------------------------------------------
# Scaling helpers (logit on compositions, affine on the flow ratio)
# ---------------------------------------------------------------------------

def logit(x, eps):
    c = min(max(x, eps), 1.0 - eps)
    return np.log(c / (1.0 - c))


def sigmoid(z):
    if z >= 0.0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def _dlogit(x, eps):
    if x <= eps or x >= 1.0 - eps:
        return 0.0
    return 1.0 / (x * (1.0 - x))


# ---------------------------------------------------------------------------
# Hybrid stage-aggregation model with packed ANN surrogates
# ---------------------------------------------------------------------------

def _net_eval(net, off, h, s0, s1, s2):
    """Evaluate one packed single-hidden-layer net on scaled inputs.

    Packing per section: [iw row-major (h,3) | ib (h) | ow (h) | ob].
    Returns (zeta, dzeta_ds0, dzeta_ds1, dzeta_ds2) in scaled space.
    """
    iw = net[off:off + 3 * h].reshape(h, 3)
    ib = net[off + 3 * h:off + 4 * h]
    ow = net[off + 4 * h:off + 5 * h]
    ob = net[off + 5 * h]
    a = np.tanh(iw[:, 0] * s0 + iw[:, 1] * s1 + iw[:, 2] * s2 + ib)
    zeta = ob + float(ow @ a)
    g = ow * (1.0 - a * a)
    return zeta, float(g @ iw[:, 0]), float(g @ iw[:, 1]), float(g @ iw[:, 2])


def hybrid_rhs_jac(z, L, V, F, x_F, alpha, m_hold, net, net_off, hidden,
                   r_lo, r_hi, eps, want_jac):
    """Right-hand side of the hybrid model plus analytic partials.

    z        aggregation-stage compositions, bottom-up (5,)
    m_hold   effective holdups H_i * n_i per aggregation stage (5,)
    net...   packed surrogate weights (see _net_eval), one block per
             section in top-down order
    r_lo/hi  per-section affine scaling range of the flow ratio
    want_jac 0: rhs only; 1: also d/dz (5,5) and d/d(L,V) (5,2)

    Returns (f, Jz, Ju, n_clamped).  Jz/Ju are None when want_jac == 0.
    Surrogate outputs are clamped to [eps, 1-eps]; n_clamped counts how
    many sections hit the clamp (extrapolation indicator).
    """
    z = np.asarray(z, dtype=float)
    f = np.zeros(5)
    Jz = np.zeros((5, 5)) if want_jac else None
    Ju = np.zeros((5, 2)) if want_jac else None
    n_clamped = 0

    xb = np.empty(4)
    yt = np.empty(4)
    # Section partials: d xb and d y_top w.r.t. raw (z_up, z_lo, L, V).
    dxb = np.zeros((4, 4))
    dyt = np.zeros((4, 4))

    for k in range(4):
        zu = z[_SEC_UP[k]]
        zl = z[_SEC_LO[k]]
        yl = alpha * zl / (1.0 + (alpha - 1.0) * zl)
        dyl = alpha / (1.0 + (alpha - 1.0) * zl) ** 2
        Ls = L + F if _SEC_STRIP[k] else L
        r = Ls / V
        s0 = logit(zu, eps)
        s1 = logit(yl, eps)
        s2 = 2.0 * (r - r_lo[k]) / (r_hi[k] - r_lo[k]) - 1.0
        zeta, g0, g1, g2 = _net_eval(net, net_off[k], hidden[k], s0, s1, s2)
        xbk = sigmoid(zeta)
        clamped = xbk < eps or xbk > 1.0 - eps
        if clamped:
            xbk = min(max(xbk, eps), 1.0 - eps)
            n_clamped += 1
        xb[k] = xbk
        yt[k] = yl + r * (zu - xbk)
        if want_jac:
            if clamped:
                du = dl = dr = 0.0
            else:
                sig = xbk * (1.0 - xbk)
                du = sig * g0 * _dlogit(zu, eps)
                dl = sig * g1 * _dlogit(yl, eps) * dyl
                dr = sig * g2 * 2.0 / (r_hi[k] - r_lo[k])
            dxb[k, 0] = du
            dxb[k, 1] = dl
            dxb[k, 2] = dr / V               # d xb / dL via r
            dxb[k, 3] = -dr * r / V          # d xb / dV via r
            dyt[k, 0] = r * (1.0 - du)
            dyt[k, 1] = dyl - r * dl
            dyt[k, 2] = (zu - xbk) / V - r * dxb[k, 2]
            dyt[k, 3] = -r * (zu - xbk) / V - r * dxb[k, 3]

    LF = L + F
    y_z = alpha * z / (1.0 + (alpha - 1.0) * z)
    dy_z = alpha / (1.0 + (alpha - 1.0) * z) ** 2

    f[4] = V * (yt[0] - z[4]) / m_hold[4]
    f[3] = (L * (xb[0] - z[3]) + V * (yt[1] - y_z[3])) / m_hold[3]
    f[2] = (L * (xb[1] - z[2]) + V * (yt[2] - y_z[2]) + F * (x_F - z[2])) / m_hold[2]
    f[1] = (LF * (xb[2] - z[1]) + V * (yt[3] - y_z[1])) / m_hold[1]
    f[0] = (LF * (xb[3] - z[0]) + V * (z[0] - y_z[0])) / m_hold[0]

    if want_jac:
        Jz[4, 4] = V * (dyt[0, 0] - 1.0) / m_hold[4]
        Jz[4, 3] = V * dyt[0, 1] / m_hold[4]

        Jz[3, 4] = L * dxb[0, 0] / m_hold[3]
        Jz[3, 3] = (L * (dxb[0, 1] - 1.0) + V * (dyt[1, 0] - dy_z[3])) / m_hold[3]
        Jz[3, 2] = V * dyt[1, 1] / m_hold[3]

        Jz[2, 3] = L * dxb[1, 0] / m_hold[2]
        Jz[2, 2] = (L * (dxb[1, 1] - 1.0) + V * (dyt[2, 0] - dy_z[2]) - F) / m_hold[2]
        Jz[2, 1] = V * dyt[2, 1] / m_hold[2]

        Jz[1, 2] = LF * dxb[2, 0] / m_hold[1]
        Jz[1, 1] = (LF * (dxb[2, 1] - 1.0) + V * (dyt[3, 0] - dy_z[1])) / m_hold[1]
        Jz[1, 0] = V * dyt[3, 1] / m_hold[1]

        Jz[0, 1] = LF * dxb[3, 0] / m_hold[0]
        Jz[0, 0] = (LF * (dxb[3, 1] - 1.0) + V * (1.0 - dy_z[0])) / m_hold[0]

        Ju[4, 0] = V * dyt[0, 2] / m_hold[4]
        Ju[4, 1] = ((yt[0] - z[4]) + V * dyt[0, 3]) / m_hold[4]

        Ju[3, 0] = ((xb[0] - z[3]) + L * dxb[0, 2] + V * dyt[1, 2]) / m_hold[3]
        Ju[3, 1] = (L * dxb[0, 3] + (yt[1] - y_z[3]) + V * dyt[1, 3]) / m_hold[3]

        Ju[2, 0] = ((xb[1] - z[2]) + L * dxb[1, 2] + V * dyt[2, 2]) / m_hold[2]
        Ju[2, 1] = (L * dxb[1, 3] + (yt[2] - y_z[2]) + V * dyt[2, 3]) / m_hold[2]

        Ju[1, 0] = ((xb[2] - z[1]) + LF * dxb[2, 2] + V * dyt[3, 2]) / m_hold[1]
        Ju[1, 1] = (LF * dxb[2, 3] + (yt[3] - y_z[1]) + V * dyt[3, 3]) / m_hold[1]

        Ju[0, 0] = ((xb[3] - z[0]) + LF * dxb[3, 2]) / m_hold[0]
        Ju[0, 1] = (LF * dxb[3, 3] + (z[0] - y_z[0])) / m_hold[0]

    return f, Jz, Ju, n_clamped
