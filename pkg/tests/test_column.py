import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from colnmpc import kernels
from colnmpc.column import (AggregationLayout, ColumnInputs, ColumnParams,
                            HybridModel, SectionOracle, full_input_jacobian,
                            full_rhs, full_state_jacobian, hybrid_steady_state,
                            oracle_hybrid, reduced_rhs, sample_admissible_inputs,
                            section_balance_close, section_steady_solve,
                            steady_state_solve, vapor_equilibrium)

from conftest import NOMINAL_L, NOMINAL_V, NOMINAL_XF


# ---------------------------------------------------------------------------
# vapor_equilibrium
# ---------------------------------------------------------------------------

def test_equilibrium_fixed_points():
    for alpha in (1.0, 2.0, 3.55, 10.0):
        assert vapor_equilibrium(0.0, alpha) == 0.0
        assert vapor_equilibrium(1.0, alpha) == 1.0


def test_equilibrium_direct_value():
    # 2*0.5 / (1 + 0.5)
    assert vapor_equilibrium(0.5, 2.0) == pytest.approx(2.0 / 3.0, abs=1e-12)


@given(x=st.floats(0.0, 1.0 - 2e-6), dx=st.floats(1e-6, 0.5),
       alpha=st.floats(0.1, 20.0))
@settings(max_examples=200, deadline=None)
def test_equilibrium_strictly_increasing(x, dx, alpha):
    # strictness holds wherever doubles can resolve the step
    hi = min(x + dx, 1.0 - 1e-6)
    if hi > x:
        assert vapor_equilibrium(hi, alpha) > vapor_equilibrium(x, alpha)


# ---------------------------------------------------------------------------
# full_rhs
# ---------------------------------------------------------------------------

def test_full_rhs_zero_at_steady_state(params, nominal_u, nominal_steady):
    f = full_rhs(nominal_steady, nominal_u, params)
    assert np.max(np.abs(f)) <= 1e-10


def test_full_rhs_no_driving_force():
    # alpha = 1, uniform composition equal to the feed: nothing moves
    p = ColumnParams(alpha=1.0)
    c = 0.37
    u = ColumnInputs(2.5, 2.9, p.feed_flow, c)
    f = full_rhs(np.full(p.n_total, c), u, p)
    assert np.max(np.abs(f)) == 0.0


def test_full_rhs_component_conservation(params, rng):
    # Sum of stage balances telescopes to the overall balance.
    for _ in range(300):
        x = rng.uniform(0.0, 1.0, params.n_total)
        L, V = sample_admissible_inputs(params, rng, 1, margin=0.01)[0]
        x_F = rng.uniform(0.0, 1.0)
        u = ColumnInputs(L, V, params.feed_flow, x_F)
        f = full_rhs(x, u, params)
        D = V - L
        B = params.feed_flow + L - V
        total = np.dot(params.holdups, f)
        expected = params.feed_flow * x_F - D * x[-1] - B * x[0]
        assert abs(total - expected) <= 1e-12


def test_full_rhs_rejects_bad_state(params, nominal_u):
    x = np.full(params.n_total, 0.3)
    x[5] = np.nan
    with pytest.raises(ValueError):
        full_rhs(x, nominal_u, params)


def test_full_rhs_deterministic(params, nominal_u, rng):
    x = rng.uniform(0.0, 1.0, params.n_total)
    f1 = full_rhs(x, nominal_u, params)
    f2 = full_rhs(x.copy(), nominal_u, params)
    assert np.array_equal(f1, f2)


def test_full_jacobians_match_finite_differences(params, nominal_u, rng):
    x = rng.uniform(0.05, 0.95, params.n_total)
    J = full_state_jacobian(x, nominal_u, params)
    h = 1e-7
    for j in range(0, params.n_total, 5):
        xp, xm = x.copy(), x.copy()
        xp[j] += h
        xm[j] -= h
        col = (full_rhs(xp, nominal_u, params)
               - full_rhs(xm, nominal_u, params)) / (2 * h)
        assert np.allclose(J[:, j], col, rtol=1e-6, atol=1e-7)
    G = full_input_jacobian(x, nominal_u, params)
    for j, (dL, dV) in enumerate([(h, 0.0), (0.0, h)]):
        up = ColumnInputs(nominal_u.L + dL, nominal_u.V + dV, nominal_u.F,
                          nominal_u.x_F)
        um = ColumnInputs(nominal_u.L - dL, nominal_u.V - dV, nominal_u.F,
                          nominal_u.x_F)
        col = (full_rhs(x, up, params) - full_rhs(x, um, params)) / (2 * h)
        assert np.allclose(G[:, j], col, rtol=1e-6, atol=1e-8)


# ---------------------------------------------------------------------------
# aggregation layout / reduced model
# ---------------------------------------------------------------------------

def test_default_layout(params, layout):
    assert layout.agg_stages == [1, 14, 21, 28, 42]
    # nearest-stage holdup assignment, ties toward the stage above
    assert layout.holdup_factors == pytest.approx([1.3, 10.0, 7.0, 10.0, 1.35])
    total = np.dot(layout.holdup_factors,
                   params.holdups[layout.agg_idx])
    assert total == pytest.approx(params.holdups.sum(), rel=1e-14)
    assert [s.tray_count for s in layout.sections] == [13, 6, 6, 12]
    assert [s.uses_stripping_flow for s in layout.sections] == [
        False, False, True, True]


def test_layout_requires_feed_stage():
    p = ColumnParams()
    with pytest.raises(ValueError):
        AggregationLayout.from_params(p, agg_stages=[1, 14, 28, 42]).validate(p)


def test_reduced_rhs_degenerate_aggregation(params, nominal_u, rng):
    # every stage aggregated with H = 1: identical to the full model
    layout = AggregationLayout.from_params(
        params, agg_stages=list(range(1, params.n_total + 1)))
    assert layout.holdup_factors == pytest.approx([1.0] * params.n_total)
    x = rng.uniform(0.0, 1.0, params.n_total)
    xdot, resid = reduced_rhs(x, nominal_u, params, layout)
    assert resid.size == 0
    assert np.allclose(xdot, full_rhs(x, nominal_u, params), rtol=0, atol=0)


def test_reduced_rhs_steady_state(params, layout, nominal_u, nominal_steady):
    xdot, resid = reduced_rhs(nominal_steady, nominal_u, params, layout)
    assert np.max(np.abs(xdot)) <= 1e-10
    assert np.max(np.abs(resid)) <= 1e-10


def test_reduced_rhs_residuals_are_tray_balances(params, layout, nominal_u, rng):
    x = rng.uniform(0.0, 1.0, params.n_total)
    _, resid = reduced_rhs(x, nominal_u, params, layout)
    numer = full_rhs(x, nominal_u, params) * params.holdups
    mask = np.ones(params.n_total, dtype=bool)
    mask[layout.agg_idx] = False
    assert np.array_equal(resid, numer[mask])


# ---------------------------------------------------------------------------
# stationary sections
# ---------------------------------------------------------------------------

def test_section_solve_empty_section():
    assert section_steady_solve(0.37, 0.61, 1.3, 0, 2.0) == (0.37, 0.61)


def test_section_solve_single_tray_closed_form():
    # alpha = 1 (y = x), r = 1: tray composition is the arithmetic mean
    x_bot, y_top = section_steady_solve(0.4, 0.6, 1.0, 1, 1.0)
    assert x_bot == pytest.approx(0.5, abs=1e-12)
    assert y_top == pytest.approx(0.5, abs=1e-12)


def test_section_solve_against_full_steady_state(params, layout, nominal_u,
                                                 nominal_steady):
    # Each section's stationary solve must reproduce the tray compositions
    # of the full-order steady state bounded by the aggregation stages.
    x = nominal_steady
    y = vapor_equilibrium(x, params.alpha)
    for sec in layout.sections:
        iu, il = sec.upper_stage - 1, sec.lower_stage - 1
        r = sec.flow_ratio(nominal_u.L, nominal_u.V, nominal_u.F)
        x_bot, y_top = section_steady_solve(
            x[iu], y[il], r, sec.tray_count, params.alpha, tol=1e-13)
        assert x_bot == pytest.approx(x[il + 1], abs=1e-8)
        assert y_top == pytest.approx(y[iu - 1], abs=1e-8)
        # overall section balance
        assert r * x[iu] + y[il] == pytest.approx(r * x_bot + y_top, abs=1e-10)


def test_section_balance_close_identities(rng):
    assert section_balance_close(0.4, 0.6, 0.4, 1.7) == pytest.approx(0.6)
    assert section_balance_close(0.4, 0.6, 0.5, 1.0) == pytest.approx(0.5)
    for _ in range(50):
        x_up, y_lo = rng.uniform(0.05, 0.95, 2)
        r = rng.uniform(0.3, 3.0)
        m = rng.integers(1, 14)
        x_bot, y_top = section_steady_solve(x_up, y_lo, r, int(m), 2.0)
        assert section_balance_close(x_up, y_lo, x_bot, r) == pytest.approx(
            y_top, abs=1e-9)


# ---------------------------------------------------------------------------
# steady_state_solve
# ---------------------------------------------------------------------------

def test_steady_state_residual_and_balance(params, rng):
    for _ in range(5):
        L, V = sample_admissible_inputs(params, rng, 1, margin=0.03)[0]
        x_F = rng.uniform(0.2, 0.45)
        u = ColumnInputs(L, V, params.feed_flow, x_F)
        x = steady_state_solve(u, params)
        assert np.max(np.abs(full_rhs(x, u, params))) <= 1e-10
        D, B = V - L, params.feed_flow + L - V
        assert params.feed_flow * x_F == pytest.approx(
            D * x[-1] + B * x[0], abs=1e-9)


def test_steady_state_no_separation():
    p = ColumnParams(alpha=1.0)
    u = ColumnInputs(2.5, 2.9, p.feed_flow, 0.41)
    x = steady_state_solve(u, p)
    assert np.allclose(x, 0.41, atol=1e-10)


# ---------------------------------------------------------------------------
# hybrid model (oracle mode)
# ---------------------------------------------------------------------------

def test_hybrid_oracle_matches_full_steady_state(params, layout, nominal_u,
                                                 nominal_steady):
    hm = oracle_hybrid(params, layout)
    z = hybrid_steady_state(hm, nominal_u,
                            init=layout.state_from_plant(nominal_steady))
    assert np.max(np.abs(z - layout.state_from_plant(nominal_steady))) <= 1e-8


def test_hybrid_oracle_steady_state_equivalence_sample(params, layout, rng):
    # spec invariant, smaller sample here; the acceptance suite runs 50
    hm = oracle_hybrid(params, layout)
    for _ in range(5):
        L, V = sample_admissible_inputs(params, rng, 1, margin=0.03)[0]
        x_F = rng.uniform(0.22, 0.42)
        u = ColumnInputs(L, V, params.feed_flow, x_F)
        x_full = steady_state_solve(u, params)
        z = hybrid_steady_state(hm, u, init=layout.state_from_plant(x_full))
        assert np.max(np.abs(z - layout.state_from_plant(x_full))) <= 1e-8


def test_hybrid_no_driving_force(layout):
    p = ColumnParams(alpha=1.0)
    hm = oracle_hybrid(p, AggregationLayout.from_params(p))
    u = ColumnInputs(2.5, 2.9, p.feed_flow, 0.32)
    f, _ = hm.rhs(np.full(5, 0.32), u)
    assert np.max(np.abs(f)) <= 1e-12


def _hybrid_fd_check(model, z, u, rtol):
    f0, Jz, Ju, _ = model.rhs_and_jac(z, u)
    h = 1e-6
    Jfd = np.empty((5, 5))
    for j in range(5):
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        Jfd[:, j] = (model.rhs(zp, u)[0] - model.rhs(zm, u)[0]) / (2 * h)
    scale = max(np.max(np.abs(Jfd)), 1.0)
    assert np.max(np.abs(Jz - Jfd)) / scale <= rtol
    Gfd = np.empty((5, 2))
    for j, (dL, dV) in enumerate([(h, 0.0), (0.0, h)]):
        up = ColumnInputs(u.L + dL, u.V + dV, u.F, u.x_F)
        um = ColumnInputs(u.L - dL, u.V - dV, u.F, u.x_F)
        Gfd[:, j] = (model.rhs(z, up)[0] - model.rhs(z, um)[0]) / (2 * h)
    scale = max(np.max(np.abs(Gfd)), 1.0)
    assert np.max(np.abs(Ju - Gfd)) / scale <= rtol


def test_hybrid_oracle_partials_match_fd(params, layout, rng):
    hm = oracle_hybrid(params, layout, tol=1e-14)
    u = ColumnInputs(NOMINAL_L, NOMINAL_V, params.feed_flow, NOMINAL_XF)
    for _ in range(3):
        z = np.sort(rng.uniform(0.02, 0.98, 5))
        _hybrid_fd_check(hm, z, u, rtol=1e-6)


def test_hybrid_surrogate_partials_match_fd(params, layout, rng):
    from colnmpc.surrogate import ScalingSpec, SurrogateModel
    models = [SurrogateModel.new_random(i, rng, hidden=4,
                                        scaling=ScalingSpec(r_lo=0.3, r_hi=4.0))
              for i in range(4)]
    hm = HybridModel(params, layout, models)
    u = ColumnInputs(NOMINAL_L, NOMINAL_V, params.feed_flow, NOMINAL_XF)
    for _ in range(3):
        z = np.sort(rng.uniform(0.05, 0.95, 5))
        _hybrid_fd_check(hm, z, u, rtol=1e-6)


def test_hybrid_surrogate_clamp_flag(params, layout, rng):
    # a constant net with an extreme output bias saturates the inverse
    # scaling; evaluations must be clamped and flagged
    from colnmpc.surrogate import ScalingSpec, SurrogateModel
    sc = ScalingSpec()
    extreme = SurrogateModel(0, np.zeros((1, 3)), np.zeros(1), np.zeros(1),
                             40.0, sc)
    models = [extreme] + [SurrogateModel.new_random(i, rng, scaling=sc)
                          for i in range(1, 4)]
    hm = HybridModel(params, layout, models)
    u = ColumnInputs(NOMINAL_L, NOMINAL_V, params.feed_flow, NOMINAL_XF)
    f, _, _, n_clamped = hm.rhs_and_jac(np.full(5, 0.5), u)
    assert n_clamped == 1
    assert np.all(np.isfinite(f))
