import numpy as np
import pytest

import ostop
from ostop import value as val
from ostop.errors import ContinuityViolation

kinked = ostop.kinked_linear


@pytest.fixture(scope="module")
def solved_c2(gbm_spec):
    return ostop.solve_stopping_problem(gbm_spec, kinked(2.0))


class TestAssemble:
    def test_continuity_at_boundaries(self, solved_c2):
        vf = solved_c2.value_function
        for x, _side in vf.partition.boundary_points():
            assert vf(x) == pytest.approx(float(vf.payoff(x)), rel=1e-10)

    def test_matches_displayed_three_piece_form(self, solved_c2, gbm_pair):
        # v = payoff on both stopping rays, A phi + B psi between
        vf = solved_c2.value_function
        d = solved_c2.solution.diagnostics
        a, b, A, B = d["a"], d["b"], d["A"], d["B"]
        xs = np.geomspace(0.2, 30, 200)
        g = vf.payoff
        expect = np.where((xs > a) & (xs < b),
                          A * gbm_pair.phi(xs) + B * gbm_pair.psi(xs),
                          g(xs))
        assert np.allclose(vf(xs), expect, rtol=1e-12)

    def test_case_II_value_is_payoff(self, gbm_spec):
        g = ostop.from_polynomials([], [[1.0]], gbm_spec.interval)
        out = ostop.solve_stopping_problem(gbm_spec, g)
        xs = np.geomspace(0.1, 50, 50)
        assert np.allclose(out.value_function(xs), g(xs))

    def test_case_I_value_is_zero(self, gbm_spec):
        g = ostop.from_polynomials([], [[-1.0]], gbm_spec.interval)
        out = ostop.solve_stopping_problem(gbm_spec, g)
        xs = np.geomspace(0.1, 50, 50)
        assert np.allclose(out.value_function(xs), 0.0)

    def test_corrupted_coefficients_raise(self, solved_c2):
        sol = solved_c2.solution
        bad = ostop.Solution(
            case=sol.case, partition=sol.partition,
            components=(val.Component(sol.components[0].lo,
                                      sol.components[0].hi,
                                      sol.components[0].A * 1.05,
                                      sol.components[0].B),),
            payoff=sol.payoff, pair=sol.pair)
        with pytest.raises(ContinuityViolation):
            ostop.assemble(bad)


class TestVerify:
    def fixtures(self, gbm_spec, request_names):
        specs = {"kinked": (gbm_spec, kinked(2.0)),
                 "call": (gbm_spec, kinked(-1.0)),
                 "put": (gbm_spec,
                         ostop.from_polynomials([2.0], [[2.0, -1.0], [0.0]],
                                                gbm_spec.interval))}
        return [specs[n] for n in request_names]

    @pytest.mark.parametrize("c", [-1.0, 0.0, 2.0, 10.0])
    def test_all_checks_pass_for_kinked_family(self, gbm_spec, gbm_pair, c):
        out = ostop.solve_stopping_problem(gbm_spec, kinked(c))
        assert out.verification.passed, out.verification.summary()

    def test_checks_pass_for_staircases(self, gbm_spec, stair_quadratic,
                                        stair_linear):
        for g in (stair_quadratic, stair_linear):
            out = ostop.solve_stopping_problem(gbm_spec, g)
            assert out.verification.passed, out.verification.summary()

    def test_perturbed_dynamics_fail_verification(self, gbm_spec, solved_c2):
        # keep the solved coefficients but change the drift: the basis pair
        # changes, so the old numbers no longer paste to the payoff
        sol = solved_c2.solution
        spec2 = ostop.geometric_bm(0.05, 0.2, 0.01)
        pair2 = ostop.fundamental_solutions(spec2)
        vf2 = val.ValueFunction(sol.partition, tuple(sol.components),
                                sol.payoff, pair2)
        mu2 = ostop.lop_measure(sol.payoff, spec2)
        rep = ostop.verify_solution(vf2, sol.payoff, mu2, pair2, spec=spec2)
        assert not rep.passed
        assert not rep.entries["dominates_payoff"][0]

    def test_case_II_supersolution_on_whole_domain(self, gbm_spec, gbm_pair):
        g = ostop.from_polynomials([], [[1.0]], gbm_spec.interval)
        out = ostop.solve_stopping_problem(gbm_spec, g)
        assert out.verification.entries["hjb_supersolution_density"][0]

    def test_growth_bound_reported(self, solved_c2):
        ok, detail = solved_c2.verification.entries["growth_bound"]
        assert ok and "C" in detail

    def test_value_dominates_and_strict_inside(self, solved_c2):
        vf = solved_c2.value_function
        g = vf.payoff
        xs = np.geomspace(0.2, 30, 400)
        v, gv = vf(xs), g(xs)
        assert np.all(v >= gv - 1e-10 * (1 + np.abs(gv)))
        assert np.all(v >= 0.0)    # sup g > 0 forces a nonnegative value
        inside = (xs > vf.components[0].lo * 1.02) & \
                 (xs < vf.components[0].hi * 0.98)
        assert np.all(v[inside] > gv[inside])

    def test_monotone_under_payoff_enlargement(self, gbm_spec):
        # raise the payoff by a smooth bump supported inside the stopping
        # ray: the re-solved value cannot decrease anywhere
        base = ostop.solve_stopping_problem(gbm_spec, kinked(2.0))
        eps = 0.001   # small enough not to disturb the measure's sign structure
        bump = ostop.from_callables(
            [5.0, 6.0],
            [lambda x: 0.0 * np.asarray(x, float),
             lambda x: eps * 16 * (np.asarray(x, float) - 5.0) ** 2
             * (6.0 - np.asarray(x, float)) ** 2,
             lambda x: 0.0 * np.asarray(x, float)],
            [lambda x: 0.0 * np.asarray(x, float),
             lambda x: eps * 16 * (2 * (np.asarray(x, float) - 5.0)
                                   * (6.0 - np.asarray(x, float)) ** 2
                                   - 2 * (np.asarray(x, float) - 5.0) ** 2
                                   * (6.0 - np.asarray(x, float))),
             lambda x: 0.0 * np.asarray(x, float)],
            [lambda x: 0.0 * np.asarray(x, float),
             lambda x: eps * 16 * (2 * (6.0 - np.asarray(x, float)) ** 2
                                   - 8 * (np.asarray(x, float) - 5.0)
                                   * (6.0 - np.asarray(x, float))
                                   + 2 * (np.asarray(x, float) - 5.0) ** 2),
             lambda x: 0.0 * np.asarray(x, float)],
            gbm_spec.interval)
        g2 = ostop.linear_combination([kinked(2.0), bump], [1.0, 1.0])
        out2 = ostop.solve_stopping_problem(gbm_spec, g2)
        xs = np.geomspace(0.3, 20, 150)
        assert np.all(out2.value_function(xs) >=
                      base.value_function(xs) - 1e-8)


class TestSmoothFitReport:
    def test_smooth_fit_at_interior_boundaries(self, solved_c2):
        gaps = ostop.smooth_fit_report(solved_c2.value_function,
                                       solved_c2.solution.payoff)
        assert len(gaps) == 2
        for gap in gaps:
            assert gap.smooth
            assert abs(gap.right_slope_minus_v) < 1e-6

    def test_staircase_boundaries_continuous_only(self, gbm_spec,
                                                  stair_linear):
        out = ostop.solve_stopping_problem(gbm_spec, stair_linear)
        gaps = ostop.smooth_fit_report(out.value_function, stair_linear)
        assert all(g.continuous_only for g in gaps)
        # V3-style slack at each left boundary: v' >= g'_+ = 0
        for g in gaps:
            assert g.right_slope_minus_v <= 1e-9
