import numpy as np
import pytest

import ostop

# reference diffusion used across the suite: driftless geometric Brownian
# motion, sigma(x) = 0.2 x, constant discount 0.01
GBM = dict(drift=0.0, volatility=0.2, discount=0.01)


@pytest.fixture(scope="session")
def gbm_spec():
    return ostop.geometric_bm(**GBM)


@pytest.fixture(scope="session")
def gbm_pair(gbm_spec):
    return ostop.fundamental_solutions(gbm_spec)


@pytest.fixture(scope="session")
def exponents():
    # roots of k^2 - k - 0.5 = 0 (independent oracle: quadratic formula)
    m = 0.5 - np.sqrt(0.75)
    n = 0.5 + np.sqrt(0.75)
    return m, n


def kinked(c, kink=2.0):
    return ostop.kinked_linear(c, kink)


@pytest.fixture(scope="session")
def kinked_c2():
    return kinked(2.0)


@pytest.fixture(scope="session")
def stair_quadratic():
    return ostop.staircase([2, 4, 6, 8, 10], [0, 1, 4, 9, 16, 25])


@pytest.fixture(scope="session")
def stair_linear():
    return ostop.staircase([2, 4, 6, 8, 10], [0, 2, 4, 6, 8, 10])


@pytest.fixture(scope="session")
def put_payoff():
    # (K - x)^+ with K = 2
    return ostop.from_polynomials([2.0], [[2.0, -1.0], [0.0]], (0.0, np.inf))


@pytest.fixture(scope="session")
def tent_payoff():
    # (min(x - 1, 3 - x))^+
    return ostop.from_polynomials(
        [1.0, 2.0, 3.0], [[0.0], [-1.0, 1.0], [3.0, -1.0], [0.0]],
        (0.0, np.inf))


@pytest.fixture(scope="session")
def vee_payoff():
    # 3 - x below the kink, x - 1 above: both ratio stationary points exist
    return ostop.from_polynomials([2.0], [[3.0, -1.0], [-1.0, 1.0]],
                                  (0.0, np.inf))
