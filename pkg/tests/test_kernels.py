"""Parity between the compiled kernel core and the numpy reference."""

import numpy as np
import pytest

from colnmpc import kernels
from colnmpc.kernels import pyref

fast = kernels.impl
compiled = pytest.mark.skipif(
    kernels.BACKEND != "compiled",
    reason="compiled kernels not available in this build")


def _pack_random_nets(rng):
    nets, offs, hs = [], [0], []
    for _ in range(4):
        h = int(rng.integers(1, 9))
        hs.append(h)
        w = 0.4 * rng.standard_normal(5 * h + 1)
        nets.append(w)
        offs.append(offs[-1] + w.size)
    return (np.concatenate(nets), np.array(offs[:-1], dtype=np.int64),
            np.array(hs, dtype=np.int64))


@compiled
def test_equilibrium_parity(rng):
    x = rng.uniform(0, 1, 64)
    for alpha in (1.0, 2.0, 3.55):
        assert np.array_equal(fast.equilibrium(x, alpha),
                              pyref.equilibrium(x, alpha))
        assert fast.equilibrium(0.37, alpha) == pyref.equilibrium(0.37, alpha)
        assert np.array_equal(fast.equilibrium_deriv(x, alpha),
                              pyref.equilibrium_deriv(x, alpha))
        assert np.array_equal(fast.inverse_equilibrium(x, alpha),
                              pyref.inverse_equilibrium(x, alpha))


@compiled
def test_full_model_parity(rng):
    n = 42
    holdup = np.full(n, 0.5)
    holdup[0] = holdup[-1] = 10.0
    for _ in range(25):
        x = rng.uniform(0, 1, n)
        L, V, F, xF = rng.uniform(1, 5), rng.uniform(2, 6), 1.0, rng.uniform(0, 1)
        args = (x, L, V, F, xF, 2.0, holdup, 20)
        assert np.allclose(fast.full_rhs(*args), pyref.full_rhs(*args),
                           rtol=1e-14, atol=1e-16)
        jargs = (x, L, V, F, 2.0, holdup, 20)
        assert np.allclose(fast.full_state_jac(*jargs),
                           pyref.full_state_jac(*jargs), rtol=1e-14, atol=1e-16)
        assert np.allclose(fast.full_input_jac(*jargs),
                           pyref.full_input_jac(*jargs), rtol=1e-14, atol=1e-16)


@compiled
def test_section_chain_parity(rng):
    for _ in range(50):
        x_up, y_lo = rng.uniform(0.01, 0.99, 2)
        r = rng.uniform(0.3, 3.0)
        m = int(rng.integers(1, 14))
        xs_f, it_f, res_f = fast.section_chain_solve(x_up, y_lo, r, m, 2.0)
        xs_p, it_p, res_p = pyref.section_chain_solve(x_up, y_lo, r, m, 2.0)
        assert np.allclose(xs_f, xs_p, atol=1e-12)
        assert res_f <= 1e-12 and res_p <= 1e-12


@compiled
def test_hybrid_rhs_jac_parity(rng):
    m_hold = np.array([13.0, 5.0, 3.5, 5.0, 13.5])
    r_lo = np.full(4, 0.4)
    r_hi = np.full(4, 3.6)
    for _ in range(25):
        net, off, hs = _pack_random_nets(rng)
        z = rng.uniform(0.01, 0.99, 5)
        L, V = rng.uniform(1.5, 3.0), rng.uniform(2.0, 3.5)
        args = (z, L, V, 1.0, 0.32, 2.0, m_hold, net, off, hs, r_lo, r_hi,
                1e-9, 1)
        f_f, Jz_f, Ju_f, nc_f = fast.hybrid_rhs_jac(*args)
        f_p, Jz_p, Ju_p, nc_p = pyref.hybrid_rhs_jac(*args)
        assert np.allclose(f_f, f_p, rtol=1e-13, atol=1e-15)
        assert np.allclose(Jz_f, Jz_p, rtol=1e-13, atol=1e-14)
        assert np.allclose(Ju_f, Ju_p, rtol=1e-13, atol=1e-14)
        assert nc_f == nc_p
        # rhs-only call agrees with the jacobian call
        f2, _, _, _ = fast.hybrid_rhs_jac(*args[:-1], 0)
        assert np.array_equal(f2, f_f)
