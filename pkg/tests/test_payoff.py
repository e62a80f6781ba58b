import hypothesis
import hypothesis.strategies as st
import numpy as np
import pytest

import ostop
from ostop.errors import IntegrabilityFailure, StaircaseModeRequired
from ostop.payoff import (GreenKernelIntegrals, calibrate_green_norm,
                          slope_identity_profile)


def power_payoff(j, domain=(0.0, np.inf)):
    f = lambda x: np.asarray(x, float) ** j
    df = lambda x: j * np.asarray(x, float) ** (j - 1)
    d2f = lambda x: j * (j - 1) * np.asarray(x, float) ** (j - 2)
    return ostop.from_callables([], [f], [df], [d2f], domain)


class TestOperatorMeasure:
    def test_kinked_payoff_measure(self, gbm_spec, kinked_c2):
        mu = ostop.lop_measure(kinked_c2, gbm_spec)
        # one atom at the kink of weight (1/2) sigma^2(2) * 1 = 0.08
        assert len(mu.atoms) == 1
        y, w = mu.atoms[0]
        assert y == 2.0 and w == pytest.approx(0.08, abs=1e-14)
        # density is -r g on both sides of the kink
        for x in (0.5, 1.5, 3.0, 10.0):
            assert float(mu.density(x)) == pytest.approx(
                -0.01 * float(kinked_c2(x)), rel=1e-12)

    def test_zero_payoff_zero_measure(self, gbm_spec):
        g0 = ostop.from_polynomials([], [[0.0]], gbm_spec.interval)
        mu = ostop.lop_measure(g0, gbm_spec)
        assert mu.atoms == ()
        assert float(mu.density(3.0)) == 0.0

    def test_power_payoff_density(self, gbm_spec):
        # x^j density: x^j ((1/2) s^2 j(j-1) + b j - r)
        j = 0.7
        g = power_payoff(j)
        mu = ostop.lop_measure(g, gbm_spec)
        for x in (0.5, 1.0, 4.0):
            want = x ** j * (0.5 * 0.04 * j * (j - 1) - 0.01)
            assert float(mu.density(x)) == pytest.approx(want, rel=1e-12)

    def test_staircase_requires_pasting(self, gbm_spec, stair_linear):
        with pytest.raises(StaircaseModeRequired):
            ostop.lop_measure(stair_linear, gbm_spec)

    @hypothesis.given(kink=st.floats(-3.0, 3.0).filter(lambda v: abs(v) > 1e-3),
                      loc=st.floats(0.5, 5.0))
    @hypothesis.settings(max_examples=40, deadline=None)
    def test_atom_weight_matches_kink(self, gbm_spec, kink, loc):
        # pieces x and (1+kink)x + const, glued continuously at loc
        c0 = -kink * loc
        g = ostop.from_polynomials([loc], [[0.0, 1.0], [c0, 1.0 + kink]],
                                   (0.0, np.inf))
        mu = ostop.lop_measure(g, gbm_spec)
        assert len(mu.atoms) == 1
        y, w = mu.atoms[0]
        want = 0.5 * (0.2 * loc) ** 2 * kink
        assert w == pytest.approx(want, rel=1e-9)
        assert np.sign(w) == np.sign(kink)

    def test_linearity(self, gbm_spec, kinked_c2):
        gx = ostop.from_polynomials([], [[0.0, 1.0]], gbm_spec.interval)
        combo = ostop.linear_combination([kinked_c2, gx], [2.5, 1.0])
        mu_c = ostop.lop_measure(combo, gbm_spec)
        mu_1 = ostop.lop_measure(kinked_c2, gbm_spec)
        mu_2 = ostop.lop_measure(gx, gbm_spec)
        xs = np.geomspace(0.3, 20, 17)
        assert np.allclose(mu_c.density(xs),
                           2.5 * mu_1.density(xs) + mu_2.density(xs),
                           rtol=1e-10)
        assert mu_c.atom_at(2.0) == pytest.approx(2.5 * mu_1.atom_at(2.0))


class TestWellPosedness:
    def test_linear_payoff_integrable(self, gbm_spec, gbm_pair):
        g = power_payoff(1.0)
        mu = ostop.lop_measure(g, gbm_spec)
        assert ostop.check_integrability(mu, gbm_pair)

    def test_quadratic_payoff_rejected(self, gbm_spec, gbm_pair):
        # gate r > j b + (1/2) j (j-1) s^2: j=2 needs r > 0.04 but r = 0.01
        g = power_payoff(2.0)
        mu = ostop.lop_measure(g, gbm_spec)
        res = ostop.check_integrability(mu, gbm_pair)
        assert not res
        assert not res.right.converged

    def test_zero_measure_integrable(self, gbm_spec, gbm_pair):
        g0 = ostop.from_polynomials([], [[0.0]], gbm_spec.interval)
        mu = ostop.lop_measure(g0, gbm_spec)
        assert ostop.check_integrability(mu, gbm_pair)

    def test_growth_limits_linear(self, gbm_spec, gbm_pair):
        assert ostop.check_growth_limits(power_payoff(1.0), gbm_pair)

    def test_growth_limits_reject_psi_proportional(self, gbm_spec, gbm_pair,
                                                   exponents):
        _, n = exponents
        res = ostop.check_growth_limits(power_payoff(n), gbm_pair)
        assert not res.ok_beta

    def test_growth_limits_reject_phi_proportional(self, gbm_pair, exponents):
        m, _ = exponents
        res = ostop.check_growth_limits(power_payoff(m), gbm_pair)
        assert not res.ok_alpha

    def test_bounded_payoff_ok(self, gbm_pair, kinked_c2):
        # |g| bounded near alpha, linear near beta: both limits vanish
        assert ostop.check_growth_limits(kinked_c2, gbm_pair)


class TestRepresentation:
    def test_linear_payoff(self, gbm_spec, gbm_pair):
        g = power_payoff(1.0)
        mu = ostop.lop_measure(g, gbm_spec)
        assert ostop.representation_check(g, mu, gbm_pair) < 1e-6

    def test_zero_payoff(self, gbm_spec, gbm_pair):
        g0 = ostop.from_polynomials([], [[0.0]], gbm_spec.interval)
        mu = ostop.lop_measure(g0, gbm_spec)
        assert ostop.representation_check(g0, mu, gbm_pair) == 0.0

    def test_kinked_payoff_with_atom(self, gbm_spec, gbm_pair, kinked_c2):
        mu = ostop.lop_measure(kinked_c2, gbm_spec)
        err = ostop.representation_check(kinked_c2, mu, gbm_pair,
                                         grid=np.geomspace(0.5, 50.0, 101))
        assert err < 1e-6

    def test_green_norm_calibration(self, gbm_pair):
        # the kernel normalisation that reconstructs payoffs exactly is 2,
        # and the frozen pair constant must match the calibration
        assert calibrate_green_norm() == 2.0
        assert gbm_pair.green_norm == calibrate_green_norm()


class TestSlopeIdentities:
    def test_smooth_point_sides_agree(self, gbm_spec, gbm_pair, kinked_c2):
        mu = ostop.lop_measure(kinked_c2, gbm_spec)
        sf = ostop.slope_functionals(kinked_c2, mu, gbm_pair, 3.7)
        assert sf.direct[0] == pytest.approx(sf.direct[1], rel=1e-12)
        assert sf.direct[2] == pytest.approx(sf.direct[3], rel=1e-12)
        assert sf.max_rel_mismatch < 1e-8

    def test_atom_jump_in_psi_bracket(self, gbm_spec, gbm_pair, kinked_c2):
        # across the atom the one-sided psi-brackets differ by
        # knorm * W(2) * Psi(2) * atom (= psi(2) * kink for this payoff)
        mu = ostop.lop_measure(kinked_c2, gbm_spec)
        sf = ostop.slope_functionals(kinked_c2, mu, gbm_pair, 2.0)
        jump = sf.direct[2] - sf.direct[3]
        want = (gbm_pair.green_norm * float(gbm_pair.wronskian(2.0))
                * float(gbm_pair.cap_psi(2.0)) * mu.atom_at(2.0))
        assert jump == pytest.approx(want, rel=1e-10)
        jump_int = sf.integral[2] - sf.integral[3]
        assert jump_int == pytest.approx(want, rel=1e-10)

    def test_linear_payoff_psi_bracket_value(self, gbm_spec, gbm_pair,
                                             exponents):
        # g = x at x = 1: psi-bracket = psi(1) - psi'(1) = 1 - n
        _, n = exponents
        g = power_payoff(1.0)
        mu = ostop.lop_measure(g, gbm_spec)
        sf = ostop.slope_functionals(g, mu, gbm_pair, 1.0)
        assert sf.direct[2] == pytest.approx(1.0 - n, rel=1e-12)

    @pytest.mark.parametrize("payoff_name", ["kinked", "put", "tent", "linear"])
    def test_identity_profile(self, gbm_spec, gbm_pair, kinked_c2, put_payoff,
                              tent_payoff, payoff_name):
        g = {"kinked": kinked_c2, "put": put_payoff, "tent": tent_payoff,
             "linear": power_payoff(1.0)}[payoff_name]
        mu = ostop.lop_measure(g, gbm_spec)
        gki = GreenKernelIntegrals(mu, gbm_pair)
        xs = np.geomspace(0.5, 50.0, 100)
        assert slope_identity_profile(g, mu, gbm_pair, xs, gki=gki) < 1e-6


class TestRunningPayoff:
    def test_zero_running_is_minus_terminal(self, gbm_spec, gbm_pair,
                                            kinked_c2):
        H0 = lambda x: 0.0 * np.asarray(x, float)
        g = ostop.running_payoff_to_terminal(H0, kinked_c2, gbm_spec, gbm_pair)
        xs = np.geomspace(0.3, 20, 21)
        assert np.allclose(g(xs), -kinked_c2(xs), atol=1e-12)

    def test_proportional_running_payoff_is_identity(self, gbm_spec, gbm_pair):
        # H = r x under driftless GBM has potential h(x) = x
        H = lambda x: 0.01 * np.asarray(x, float)
        g = ostop.running_payoff_to_terminal(H, None, gbm_spec, gbm_pair)
        xs = np.geomspace(0.3, 8.0, 17)
        assert np.max(np.abs(g(xs) - xs) / xs) < 1e-6

    def test_step_running_payoff_is_c1(self, gbm_spec, gbm_pair):
        H = lambda x: np.where(np.asarray(x, float) < 2.0, 0.02, 0.005)
        g = ostop.running_payoff_to_terminal(H, None, gbm_spec, gbm_pair,
                                             h_breaks=(2.0,))
        eps = 1e-6
        gap = abs(g.derivative(2 + eps, "+") - g.derivative(2 - eps, "-"))
        assert gap < 1e-5
        # and the second derivative genuinely jumps (h is C^1 but not C^2)
        d2_gap = abs(g.second_derivative(2.01) - g.second_derivative(1.99))
        assert d2_gap > 1e-3

    def test_unintegrable_running_payoff_rejected(self, gbm_spec, gbm_pair):
        H = lambda x: np.asarray(x, float) ** 2
        with pytest.raises(IntegrabilityFailure):
            ostop.running_payoff_to_terminal(H, None, gbm_spec, gbm_pair)
