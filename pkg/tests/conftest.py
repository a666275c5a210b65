import numpy as np
import pytest

from colnmpc.column import (AggregationLayout, ColumnInputs, ColumnParams,
                            steady_state_solve)

# Nominal operating point: steady products sit at the default set-points
# (0.99995 / 0.00005) for the default column (see config defaults).
NOMINAL_L = 2.0346651819
NOMINAL_V = 2.3546471803
NOMINAL_XF = 0.32


@pytest.fixture(scope="session")
def params():
    return ColumnParams()


@pytest.fixture(scope="session")
def layout(params):
    return AggregationLayout.from_params(params)


@pytest.fixture(scope="session")
def nominal_u(params):
    return ColumnInputs(NOMINAL_L, NOMINAL_V, params.feed_flow, NOMINAL_XF)


@pytest.fixture(scope="session")
def nominal_steady(params, nominal_u):
    return steady_state_solve(nominal_u, params)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
