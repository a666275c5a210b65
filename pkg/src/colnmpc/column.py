"""Binary distillation column models.

Three model levels share one stage-indexing convention (0 = reboiler,
n-1 = condenser, feed in between):

* full-order stagewise model: one composition ODE per stage,
* exact reduced stage-aggregation model: ODEs only at aggregation
  stages (holdup inflated by a factor H), algebraic balances elsewhere,
* hybrid model: the stationary tray sections between aggregation stages
  replaced by per-section predictors (ANN surrogates or the exact
  steady-section oracle).

Constant molar holdup and flows, ideal binary thermodynamics with
constant relative volatility, no pressure drop.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .integrate import IvpProblem, integrate

__all__ = [
    "ColumnParams", "AggregationLayout", "ColumnInputs", "Section",
    "SectionSolveError", "SteadyStateError", "SectionOracle", "HybridModel",
    "oracle_hybrid", "vapor_equilibrium", "full_rhs", "full_state_jacobian",
    "full_input_jacobian", "reduced_rhs",
    "section_steady_solve", "section_balance_close",
    "steady_state_solve", "hybrid_steady_state", "sample_admissible_inputs",
]


class SectionSolveError(RuntimeError):
    def __init__(self, iterations, residual):
        super().__init__(
            f"section solve did not converge: {iterations} iterations, "
            f"residual {residual:.3e}")
        self.iterations = iterations
        self.residual = residual


class SteadyStateError(RuntimeError):
    pass


@dataclass
class ColumnParams:
    """Physical and structural description of the column.

    Stage count includes condenser and reboiler.  Bounds are the hard
    actuator limits on reflux L and boilup V [mol/s]; inputs are
    admissible when additionally D = V - L > 0 and B = F + L - V > 0.
    """

    n_total: int = 42
    feed_stage: int = 21              # 1-based, 1 = reboiler
    alpha: float = 2.0
    tray_holdup: float = 0.5          # [mol]
    reboiler_holdup: float = 10.0     # [mol]
    condenser_holdup: float = 10.0    # [mol]
    feed_flow: float = 1.0            # [mol/s]
    feed_comp_nominal: float = 0.32
    bounds_L: tuple = (1.0, 5.0)      # [mol/s]
    bounds_V: tuple = (2.0, 6.0)      # [mol/s]

    def __post_init__(self):
        if not (1 <= self.feed_stage <= self.n_total):
            raise ValueError("feed stage outside the column")
        if self.feed_stage in (1, self.n_total):
            raise ValueError("feed stage cannot be reboiler or condenser")
        # alpha = 1 (no separation) is admitted as a degenerate test case.
        if self.alpha < 1.0:
            raise ValueError("relative volatility must be >= 1")
        if min(self.tray_holdup, self.reboiler_holdup,
               self.condenser_holdup) <= 0.0:
            raise ValueError("holdups must be positive")
        if self.feed_flow <= 0.0:
            raise ValueError("feed flow must be positive")
        if self.bounds_L[0] >= self.bounds_L[1] or self.bounds_V[0] >= self.bounds_V[1]:
            raise ValueError("degenerate flow bounds")
        # The admissible set box * {D > 0, B > 0} must be non-empty.
        ok = (self.bounds_V[1] > self.bounds_L[0]
              and self.bounds_V[0] < self.bounds_L[1] + self.feed_flow)
        if not ok:
            raise ValueError("bounds admit no inputs with D > 0 and B > 0")

    @property
    def feed_idx(self) -> int:
        return self.feed_stage - 1

    @property
    def holdups(self) -> np.ndarray:
        n = np.full(self.n_total, self.tray_holdup)
        n[0] = self.reboiler_holdup
        n[-1] = self.condenser_holdup
        return n

    def is_admissible(self, L, V, margin=0.0):
        inside = (self.bounds_L[0] - 1e-12 <= L <= self.bounds_L[1] + 1e-12
                  and self.bounds_V[0] - 1e-12 <= V <= self.bounds_V[1] + 1e-12)
        return inside and (V - L) > margin and (self.feed_flow + L - V) > margin


@dataclass
class ColumnInputs:
    L: float
    V: float
    F: float
    x_F: float

    def __post_init__(self):
        vals = (self.L, self.V, self.F, self.x_F)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("non-finite column inputs")
        if not 0.0 <= self.x_F <= 1.0:
            raise ValueError("feed composition outside [0, 1]")


@dataclass(frozen=True)
class Section:
    """Stationary tray block between two consecutive aggregation stages."""

    upper_stage: int    # 1-based stage number of the upper aggregation stage
    lower_stage: int
    tray_count: int
    uses_stripping_flow: bool

    def flow_ratio(self, L, V, F):
        return ((L + F) if self.uses_stripping_flow else L) / V


@dataclass
class AggregationLayout:
    """Choice of aggregation stages and their holdup factors.

    agg_stages are 1-based stage numbers in ascending order (reboiler
    first).  Holdup factors inflate the aggregation-stage holdups so the
    total column holdup is preserved.
    """

    agg_stages: list
    holdup_factors: list
    sections: list = field(default_factory=list)

    @classmethod
    def from_params(cls, p: ColumnParams, agg_stages=None):
        """Default layout; spare-tray holdup goes to the nearest
        aggregation stage (ties to the stage above)."""
        if agg_stages is None:
            agg_stages = [1, 14, p.feed_stage, 28, p.n_total]
        agg_stages = sorted(set(int(s) for s in agg_stages))
        holdups = p.holdups
        extra = np.zeros(len(agg_stages))
        for stage in range(1, p.n_total + 1):
            if stage in agg_stages:
                continue
            dists = [abs(stage - a) for a in agg_stages]
            best = min(dists)
            cands = [i for i, d in enumerate(dists) if d == best]
            # tie: assign to the aggregation stage above
            pick = max(cands, key=lambda i: agg_stages[i])
            extra[pick] += holdups[stage - 1]
        factors = [1.0 + extra[i] / holdups[a - 1]
                   for i, a in enumerate(agg_stages)]
        layout = cls(agg_stages=agg_stages, holdup_factors=factors)
        layout.rebuild_sections(p)
        layout.validate(p)
        return layout

    def rebuild_sections(self, p: ColumnParams):
        self.sections = []
        for lower, upper in zip(self.agg_stages[:-1], self.agg_stages[1:]):
            self.sections.append(Section(
                upper_stage=upper,
                lower_stage=lower,
                tray_count=upper - lower - 1,
                uses_stripping_flow=upper <= p.feed_stage,
            ))
        # hybrid code orders sections top-down
        self.sections = self.sections[::-1]

    def validate(self, p: ColumnParams):
        req = {1, p.feed_stage, p.n_total}
        if not req.issubset(self.agg_stages):
            raise ValueError("condenser, reboiler and feed stage must be "
                             "aggregation stages")
        if len(self.holdup_factors) != len(self.agg_stages):
            raise ValueError("one holdup factor per aggregation stage")
        if any(h < 1.0 - 1e-12 for h in self.holdup_factors):
            raise ValueError("holdup factors must be >= 1")
        holdups = p.holdups
        total = sum(h * holdups[a - 1]
                    for h, a in zip(self.holdup_factors, self.agg_stages))
        if abs(total - holdups.sum()) > 1e-9 * holdups.sum():
            raise ValueError("aggregation does not conserve total holdup")
        for s in self.sections:
            if s.lower_stage < p.feed_stage < s.upper_stage:
                raise ValueError("section spans the feed stage")

    @property
    def agg_idx(self) -> np.ndarray:
        return np.array(self.agg_stages, dtype=int) - 1

    def effective_holdups(self, p: ColumnParams) -> np.ndarray:
        """H_i * n_i per aggregation stage, bottom-up [mol]."""
        return np.array(self.holdup_factors) * p.holdups[self.agg_idx]

    def state_from_plant(self, x_full) -> np.ndarray:
        return np.asarray(x_full, dtype=float)[self.agg_idx]


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------

def vapor_equilibrium(x, alpha):
    """Equilibrium vapor fraction y = alpha x / (1 + (alpha-1) x)."""
    return kernels.equilibrium(x, alpha)


def full_rhs(x, u: ColumnInputs, p: ColumnParams):
    """dx/dt of the full-order model (see module docstring for indexing)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n_total,):
        raise ValueError("state length does not match the column")
    if not (np.all(np.isfinite(x))):
        raise ValueError("non-finite state")
    return kernels.full_rhs(x, u.L, u.V, u.F, u.x_F, p.alpha,
                            p.holdups, p.feed_idx)


def full_state_jacobian(x, u: ColumnInputs, p: ColumnParams):
    return kernels.full_state_jac(np.asarray(x, dtype=float), u.L, u.V, u.F,
                                  p.alpha, p.holdups, p.feed_idx)


def full_input_jacobian(x, u: ColumnInputs, p: ColumnParams):
    """d full_rhs / d(L, V), shape (n, 2)."""
    return kernels.full_input_jac(np.asarray(x, dtype=float), u.L, u.V, u.F,
                                  p.alpha, p.holdups, p.feed_idx)


def reduced_rhs(x, u: ColumnInputs, p: ColumnParams, layout: AggregationLayout):
    """Exact reduced model evaluated on a full-length composition vector.

    Returns (xdot_agg, residuals): time derivatives at the aggregation
    stages (holdup inflated by H) and the algebraic residuals
    0 = L*(x_in - x_i) + V(y_in - y_i) of the zero-holdup stages.
    """
    x = np.asarray(x, dtype=float)
    numer = full_rhs(x, u, p) * p.holdups  # stage balances [mol/s]
    agg = layout.agg_idx
    xdot_agg = numer[agg] / layout.effective_holdups(p)
    mask = np.ones(p.n_total, dtype=bool)
    mask[agg] = False
    return xdot_agg, numer[mask]


def section_balance_close(x_upper, y_lower, x_bot, r):
    """Vapor leaving the section top from the overall section balance:
    r*x_upper + y_lower = r*x_bot + y_top."""
    return y_lower + r * (x_upper - x_bot)


def section_steady_solve(x_upper, y_lower, r, tray_count, alpha,
                         tol=1e-12, max_iter=60):
    """Exact stationary solution of one column section.

    Returns (x_bot, y_top): liquid leaving the bottom tray and vapor
    leaving the top tray.  This is the map the section surrogates learn.
    """
    if not (0.0 <= x_upper <= 1.0 and 0.0 <= y_lower <= 1.0):
        raise ValueError("section boundary compositions outside [0, 1]")
    if r <= 0.0 or tray_count < 0:
        raise ValueError("need r > 0 and tray_count >= 0")
    if tray_count == 0:
        return float(x_upper), float(y_lower)
    xs, it, resid = kernels.section_chain_solve(
        float(x_upper), float(y_lower), float(r), int(tray_count),
        float(alpha), tol, max_iter)
    if resid > tol:
        raise SectionSolveError(it, resid)
    x_bot = float(xs[tray_count - 1])
    y_top = float(kernels.equilibrium(xs[0], alpha))
    return x_bot, y_top


class SectionOracle:
    """Exact steady-section predictor (the map the ANNs approximate)."""

    def __init__(self, section: Section, alpha, tol=1e-12):
        self.section = section
        self.alpha = alpha
        self.tol = tol

    def predict(self, x_up, y_lo, r):
        x_bot, _ = section_steady_solve(
            x_up, y_lo, r, self.section.tray_count, self.alpha, self.tol)
        return x_bot, False

    def input_gradient(self, x_up, y_lo, r):
        """d x_bot / d(x_up, y_lo, r) by the implicit function theorem."""
        m = self.section.tray_count
        if m == 0:
            return np.array([1.0, 0.0, 0.0])
        xs, _, _ = kernels.section_chain_solve(
            float(x_up), float(y_lo), float(r), m, self.alpha, self.tol, 60)
        dy = kernels.equilibrium_deriv(xs, self.alpha)
        # Residuals R_t = r (x_above - x_t) + y_below - y(x_t); solve
        # (dR/dxs) dxs = -dR/du for each boundary input u.
        J = np.zeros((m, m))
        for t in range(m):
            J[t, t] = -r - dy[t]
            if t > 0:
                J[t, t - 1] = r
            if t < m - 1:
                J[t, t + 1] = dy[t + 1]
        rhs = np.zeros((m, 3))
        rhs[0, 0] = -r                       # d/dx_up
        rhs[m - 1, 1] = -1.0                 # d/dy_lo
        x_above = np.concatenate(([x_up], xs[:-1]))
        rhs[:, 2] = -(x_above - xs)          # d/dr
        sens = np.linalg.solve(J, rhs)
        return sens[m - 1]


class HybridModel:
    """Hybrid stage-aggregation model with pluggable section predictors.

    sections_models are ordered top-down to match layout.sections.  When
    all four are ANN surrogates the packed compiled kernel is used;
    otherwise (oracle mode, mixed mode) a generic python path evaluates
    predict/input_gradient per section.
    """

    def __init__(self, params: ColumnParams, layout: AggregationLayout,
                 section_models):
        if len(section_models) != len(layout.sections):
            raise ValueError("one section model per layout section")
        self.params = params
        self.layout = layout
        self.section_models = list(section_models)
        self.m_hold = layout.effective_holdups(params)
        self._packed = None
        packs = [getattr(s, "packed", None) for s in self.section_models]
        if all(p is not None for p in packs) and len(self.section_models) == 4:
            nets, offs, hs, rlo, rhi, eps = [], [0], [], [], [], None
            for s in self.section_models:
                w, (lo, hi), e = s.packed()
                nets.append(w)
                offs.append(offs[-1] + w.size)
                hs.append(s.hidden_count)
                rlo.append(lo)
                rhi.append(hi)
                eps = e
            self._packed = (np.concatenate(nets), np.array(offs[:-1], dtype=np.int64),
                            np.array(hs, dtype=np.int64), np.array(rlo),
                            np.array(rhi), eps)

    @property
    def n_states(self):
        return len(self.layout.agg_stages)

    def rhs(self, z, u: ColumnInputs):
        f, _, _, nc = self._eval(z, u, want_jac=False)
        return f, nc

    def rhs_and_jac(self, z, u: ColumnInputs):
        """Returns (f, d f/d z, d f/d (L, V), n_clamped)."""
        return self._eval(z, u, want_jac=True)

    def rhs_fast(self, z, L, V, F, x_F, want_jac):
        """Hot-path entry without ColumnInputs construction/validation."""
        if self._packed is not None:
            net, off, hs, rlo, rhi, eps = self._packed
            return kernels.hybrid_rhs_jac(
                z, L, V, F, x_F, self.params.alpha, self.m_hold,
                net, off, hs, rlo, rhi, eps, 1 if want_jac else 0)
        return self._eval_generic(z, ColumnInputs(L, V, F, x_F), want_jac)

    def _eval(self, z, u, want_jac):
        z = np.asarray(z, dtype=float)
        if self._packed is not None:
            net, off, hs, rlo, rhi, eps = self._packed
            return kernels.hybrid_rhs_jac(
                z, u.L, u.V, u.F, u.x_F, self.params.alpha, self.m_hold,
                net, off, hs, rlo, rhi, eps, 1 if want_jac else 0)
        return self._eval_generic(z, u, want_jac)

    def _eval_generic(self, z, u, want_jac):
        p, layout = self.params, self.layout
        alpha = p.alpha
        L, V, F, x_F = u.L, u.V, u.F, u.x_F
        nsec = len(layout.sections)
        nz = z.shape[0]
        xb = np.empty(nsec)
        yt = np.empty(nsec)
        dxb = np.zeros((nsec, 4))
        dyt = np.zeros((nsec, 4))
        up_idx = nz - 1 - np.arange(nsec)
        lo_idx = up_idx - 1
        for k, (sec, model) in enumerate(zip(layout.sections,
                                             self.section_models)):
            zu, zl = z[up_idx[k]], z[lo_idx[k]]
            yl = kernels.equilibrium(zl, alpha)
            dyl = kernels.equilibrium_deriv(zl, alpha)
            r = sec.flow_ratio(L, V, F)
            val, clamped = model.predict(zu, yl, r)
            xb[k] = val
            yt[k] = yl + r * (zu - val)
            if want_jac:
                g = (np.zeros(3) if clamped
                     else np.asarray(model.input_gradient(zu, yl, r)))
                du, dl_raw, dr = g[0], g[1] * dyl, g[2]
                dxb[k] = (du, dl_raw, dr / V, -dr * r / V)
                dyt[k] = (r * (1.0 - du), dyl - r * dl_raw,
                          (zu - val) / V - r * dxb[k, 2],
                          -r * (zu - val) / V - r * dxb[k, 3])
        # assemble the aggregation-stage balances (generic in section count
        # is unnecessary: the layout always has condenser/feed/reboiler agg
        # stages; this path supports the standard 4-section layout).
        if nsec != 4:
            raise NotImplementedError("generic hybrid path expects 4 sections")
        z_clamped = z
        y_z = kernels.equilibrium(z_clamped, alpha)
        dy_z = kernels.equilibrium_deriv(z_clamped, alpha)
        m = self.m_hold
        LF = L + F
        f = np.array([
            (LF * (xb[3] - z[0]) + V * (z[0] - y_z[0])) / m[0],
            (LF * (xb[2] - z[1]) + V * (yt[3] - y_z[1])) / m[1],
            (L * (xb[1] - z[2]) + V * (yt[2] - y_z[2]) + F * (x_F - z[2])) / m[2],
            (L * (xb[0] - z[3]) + V * (yt[1] - y_z[3])) / m[3],
            V * (yt[0] - z[4]) / m[4],
        ])
        if not want_jac:
            return f, None, None, 0
        Jz = np.zeros((5, 5))
        Ju = np.zeros((5, 2))
        Jz[4, 4] = V * (dyt[0, 0] - 1.0) / m[4]
        Jz[4, 3] = V * dyt[0, 1] / m[4]
        Jz[3, 4] = L * dxb[0, 0] / m[3]
        Jz[3, 3] = (L * (dxb[0, 1] - 1.0) + V * (dyt[1, 0] - dy_z[3])) / m[3]
        Jz[3, 2] = V * dyt[1, 1] / m[3]
        Jz[2, 3] = L * dxb[1, 0] / m[2]
        Jz[2, 2] = (L * (dxb[1, 1] - 1.0) + V * (dyt[2, 0] - dy_z[2]) - F) / m[2]
        Jz[2, 1] = V * dyt[2, 1] / m[2]
        Jz[1, 2] = LF * dxb[2, 0] / m[1]
        Jz[1, 1] = (LF * (dxb[2, 1] - 1.0) + V * (dyt[3, 0] - dy_z[1])) / m[1]
        Jz[1, 0] = V * dyt[3, 1] / m[1]
        Jz[0, 1] = LF * dxb[3, 0] / m[0]
        Jz[0, 0] = (LF * (dxb[3, 1] - 1.0) + V * (1.0 - dy_z[0])) / m[0]

        Ju[4, 0] = V * dyt[0, 2] / m[4]
        Ju[4, 1] = ((yt[0] - z[4]) + V * dyt[0, 3]) / m[4]
        Ju[3, 0] = ((xb[0] - z[3]) + L * dxb[0, 2] + V * dyt[1, 2]) / m[3]
        Ju[3, 1] = (L * dxb[0, 3] + (yt[1] - y_z[3]) + V * dyt[1, 3]) / m[3]
        Ju[2, 0] = ((xb[1] - z[2]) + L * dxb[1, 2] + V * dyt[2, 2]) / m[2]
        Ju[2, 1] = (L * dxb[1, 3] + (yt[2] - y_z[2]) + V * dyt[2, 3]) / m[2]
        Ju[1, 0] = ((xb[2] - z[1]) + LF * dxb[2, 2] + V * dyt[3, 2]) / m[1]
        Ju[1, 1] = (LF * dxb[2, 3] + (yt[3] - y_z[1]) + V * dyt[3, 3]) / m[1]
        Ju[0, 0] = ((xb[3] - z[0]) + LF * dxb[3, 2]) / m[0]
        Ju[0, 1] = (LF * dxb[3, 3] + (z[0] - y_z[0])) / m[0]
        return f, Jz, Ju, 0


def oracle_hybrid(params: ColumnParams, layout: AggregationLayout,
                  tol=1e-12) -> HybridModel:
    """Hybrid model whose sections are solved exactly (oracle mode)."""
    models = [SectionOracle(s, params.alpha, tol) for s in layout.sections]
    return HybridModel(params, layout, models)


# ---------------------------------------------------------------------------
# Steady-state solvers
# ---------------------------------------------------------------------------

def _ptc_steady(fun, jac, x0, tol, dt0=10.0, max_iter=500):
    """Pseudo-transient continuation (switched evolution relaxation).

    Backward-Euler-like steps (I/dt - J) step = f with an exponential
    ramp of dt; robust for the near-singular slow modes of high-purity
    columns where plain damped Newton stalls.  Iterates are kept inside
    [0, 1] by fraction-to-boundary damping.
    """
    x = np.clip(np.asarray(x0, dtype=float), 0.0, 1.0)
    f = fun(x)
    fn = np.linalg.norm(f)
    dt = dt0
    I = np.eye(x.size)
    for it in range(max_iter):
        if np.max(np.abs(f)) <= tol:
            return x, True
        try:
            step = np.linalg.solve(I / dt - jac(x), f)
        except np.linalg.LinAlgError:
            dt *= 0.25
            continue
        lam = 1.0
        neg = step < 0.0
        pos = step > 0.0
        if np.any(neg):
            lam = min(lam, 0.99 * np.min(x[neg] / -step[neg]))
        if np.any(pos):
            lam = min(lam, 0.99 * np.min((1.0 - x[pos]) / step[pos]))
        xt = np.clip(x + lam * step, 0.0, 1.0)
        ft = fun(xt)
        fnt = np.linalg.norm(ft)
        if not np.isfinite(fnt) or fnt > 2.0 * fn:
            dt *= 0.5
            if dt < 1e-8:
                return x, False
            continue
        x, f, fn = xt, ft, fnt
        if lam == 1.0:
            dt = min(dt * 2.0, 1e16)
    return x, np.max(np.abs(f)) <= tol


def steady_state_solve(u: ColumnInputs, p: ColumnParams, init=None,
                       tol=1e-10):
    """Steady state of the full-order model: ||full_rhs||_inf <= tol.

    Pseudo-transient continuation from `init` (or a flat feed-composition
    profile), with long-horizon relaxation retries before giving up.
    """
    fun = lambda x: full_rhs(x, u, p)
    jac = lambda x: full_state_jacobian(x, u, p)
    x0 = np.full(p.n_total, u.x_F) if init is None else np.asarray(init, float)
    x, ok = _ptc_steady(fun, jac, x0, tol)
    if ok:
        return x
    x_relax = np.clip(x0, 0.0, 1.0)
    for horizon in (1e5, 1e7):
        prob = IvpProblem(
            rhs=lambda t, y, q: fun(y),
            state_jacobian=lambda t, y, q: jac(y),
            initial_state=x_relax,
            time_grid=np.array([0.0, horizon]),
            rel_tol=1e-7, abs_tol=1e-12)
        x_relax = integrate(prob).states[-1]
        x, ok = _ptc_steady(fun, jac, x_relax, tol)
        if ok:
            return x
    raise SteadyStateError(
        f"no steady state found for L={u.L}, V={u.V}, x_F={u.x_F}; "
        f"residual {np.max(np.abs(fun(x))):.3e}")


def hybrid_steady_state(model: HybridModel, u: ColumnInputs, init=None,
                        tol=1e-11):
    """Steady state of a hybrid model (5 aggregation-stage states)."""
    fun = lambda z: model.rhs(z, u)[0]
    jac = lambda z: model.rhs_and_jac(z, u)[1]
    if init is None:
        init = np.linspace(0.02, 0.98, model.n_states)
    z, ok = _ptc_steady(fun, jac, np.asarray(init, dtype=float), tol)
    if not ok:
        raise SteadyStateError(
            f"hybrid steady state did not converge; residual "
            f"{np.max(np.abs(fun(z))):.3e}")
    return z


def sample_admissible_inputs(p: ColumnParams, rng, n, margin=0.05):
    """Rejection-sample n (L, V) pairs inside bounds with D, B > margin."""
    out = np.empty((n, 2))
    k = 0
    while k < n:
        L = rng.uniform(*p.bounds_L)
        V = rng.uniform(*p.bounds_V)
        if p.is_admissible(L, V, margin=margin):
            out[k] = (L, V)
            k += 1
    return out
