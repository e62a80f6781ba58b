import numpy as np
import pytest

import ostop
from ostop.errors import UnstableScheme
from ostop.verify import (GridSpec, SimConfig, dynkin_check, estimate_value,
                          mc_hitting_factor, perturbation_test, psor_oracle)

kinked = ostop.kinked_linear


@pytest.fixture(scope="module")
def solved_c2(gbm_spec):
    return ostop.solve_stopping_problem(gbm_spec, kinked(2.0))


FAST = SimConfig(paths=20_000, dt=0.02, horizon=1500.0, seed=42)


class TestEstimateValue:
    def test_inside_stopping_region_exact(self, gbm_spec, solved_c2):
        sol = solved_c2.solution
        est = estimate_value(gbm_spec, sol.payoff, sol.partition, 0.5, FAST)
        assert est.mean == float(sol.payoff(0.5))
        assert est.std_error == 0.0

    def test_never_stop_is_zero(self, gbm_spec, gbm_pair):
        g = ostop.from_polynomials([], [[-1.0]], gbm_spec.interval)
        out = ostop.solve_stopping_problem(gbm_spec, g)
        est = estimate_value(gbm_spec, g, out.solution.partition, 1.0, FAST)
        assert est.mean == 0.0

    def test_matches_assembled_value(self, gbm_spec, solved_c2):
        sol = solved_c2.solution
        est = estimate_value(gbm_spec, sol.payoff, sol.partition, 2.0, FAST,
                             pair=sol.pair)
        v2 = solved_c2.value_function(2.0)
        assert est.within(v2), (est, v2)

    def test_determinism(self, gbm_spec, solved_c2):
        sol = solved_c2.solution
        cfg = SimConfig(paths=5_000, dt=0.05, horizon=800.0, seed=7)
        e1 = estimate_value(gbm_spec, sol.payoff, sol.partition, 2.0, cfg)
        e2 = estimate_value(gbm_spec, sol.payoff, sol.partition, 2.0, cfg)
        assert e1.mean == e2.mean and e1.std_error == e2.std_error

    def test_exact_and_euler_agree(self, gbm_spec, solved_c2):
        sol = solved_c2.solution
        cfg_e = SimConfig(paths=20_000, dt=0.02, horizon=1200.0, seed=3,
                          scheme="exact_gbm")
        cfg_u = SimConfig(paths=20_000, dt=0.005, horizon=1200.0, seed=3,
                          scheme="euler")
        e1 = estimate_value(gbm_spec, sol.payoff, sol.partition, 2.0, cfg_e,
                            pair=sol.pair)
        e2 = estimate_value(gbm_spec, sol.payoff, sol.partition, 2.0, cfg_u,
                            pair=sol.pair)
        assert abs(e1.mean - e2.mean) <= 3.0 * np.hypot(e1.std_error,
                                                        e2.std_error)

    def test_antithetic_reduces_error(self, gbm_spec, solved_c2):
        sol = solved_c2.solution
        cfg_p = SimConfig(paths=20_000, dt=0.05, horizon=1000.0, seed=9)
        cfg_a = SimConfig(paths=20_000, dt=0.05, horizon=1000.0, seed=9,
                          antithetic=True)
        e_p = estimate_value(gbm_spec, sol.payoff, sol.partition, 2.0, cfg_p,
                             pair=sol.pair)
        e_a = estimate_value(gbm_spec, sol.payoff, sol.partition, 2.0, cfg_a,
                             pair=sol.pair)
        assert e_a.std_error < e_p.std_error

    def test_euler_unstable_scheme_guard(self):
        spec = ostop.brownian_motion(0.0, 1.0, 0.05)
        # domain ]0, inf[ forced on a Brownian motion makes Euler escape
        bad = ostop.custom(drift=spec.drift, volatility=spec.volatility,
                           discount=spec.discount, interval=(0.0, np.inf),
                           r_floor=0.05)
        g = ostop.from_polynomials([1.0], [[1.0], [1.0]], (0.0, np.inf))
        from ostop.value import Component, partition_from_components
        part = partition_from_components(
            (0.0, np.inf), [Component(0.0, 50.0, 0.0, 0.0)])
        cfg = SimConfig(paths=500, dt=0.5, horizon=50.0, seed=1,
                        scheme="euler")
        with pytest.raises(UnstableScheme):
            estimate_value(bad, g, part, 1.0, cfg)


class TestHittingFactorMC:
    def test_psi_ratio(self, gbm_spec, gbm_pair, exponents):
        _, n = exponents
        cfg = SimConfig(paths=20_000, dt=0.1, horizon=1200.0, seed=42)
        est = mc_hitting_factor(gbm_spec, 1.0, 2.0, cfg, pair=gbm_pair)
        assert est.within(2.0 ** (-n))

    def test_phi_ratio_downward(self, gbm_spec, gbm_pair, exponents):
        m, _ = exponents
        cfg = SimConfig(paths=20_000, dt=0.1, horizon=1200.0, seed=11)
        est = mc_hitting_factor(gbm_spec, 4.0, 2.0, cfg, pair=gbm_pair)
        assert est.within(2.0 ** m)


class TestPerturbation:
    def test_zero_perturbation_reproduces_estimate(self, gbm_spec, solved_c2):
        # with eps = 0 every coupled strategy coincides with the optimum, so
        # the rows are bit-identical to the standalone estimator
        rows = perturbation_test(gbm_spec, solved_c2.solution.payoff,
                                 solved_c2.solution, 2.0, [0.0], FAST)
        est = estimate_value(gbm_spec, solved_c2.solution.payoff,
                             solved_c2.solution.partition, 2.0, FAST)
        for r in rows:
            assert r.estimate.mean == est.mean
            assert r.delta_mean == 0.0

    def test_base_row_consistent_with_estimate(self, gbm_spec, solved_c2):
        rows = perturbation_test(gbm_spec, solved_c2.solution.payoff,
                                 solved_c2.solution, 2.0, [0.1], FAST)
        base = rows[0]
        assert base.label == "optimal"
        assert base.delta_mean == 0.0
        est = estimate_value(gbm_spec, solved_c2.solution.payoff,
                             solved_c2.solution.partition, 2.0, FAST,
                             pair=solved_c2.solution.pair)
        assert abs(base.estimate.mean - est.mean) <= \
            3.0 * np.hypot(base.estimate.std_error, est.std_error)

    def test_no_perturbation_beats_optimum(self, gbm_spec, solved_c2):
        rows = perturbation_test(gbm_spec, solved_c2.solution.payoff,
                                 solved_c2.solution, 2.0, [0.1], FAST)
        v2 = solved_c2.value_function(2.0)
        for r in rows:
            assert r.estimate.mean <= v2 + 3 * r.estimate.std_error
        # paired comparison: no strategy improves on the solved one
        for r in rows[1:]:
            assert r.delta_mean <= 3 * r.delta_std_error

    def test_stopping_at_the_atom_is_strictly_worse(self, gbm_spec,
                                                    solved_c2):
        # widening the stopping set into the kink atom forfeits its
        # local-time value: the estimate drops far beyond the CI
        from ostop.value import Component, partition_from_components
        sol = solved_c2.solution
        part = partition_from_components(
            (0.0, np.inf), [Component(sol.components[0].lo, 2.0, 0, 0),
                            Component(2.0, sol.components[0].hi, 0, 0)])
        est = estimate_value(gbm_spec, sol.payoff, part, 2.0, FAST)
        v2 = solved_c2.value_function(2.0)
        assert est.mean == float(sol.payoff(2.0))   # starts inside D
        assert v2 - est.mean > 10 * (est.std_error + 1e-6)


class TestDynkin:
    def test_residual_vanishes_on_smooth_band(self, gbm_spec):
        g = ostop.from_polynomials([], [[0.0, 1.0]], gbm_spec.interval)
        mu = ostop.lop_measure(g, gbm_spec)
        cfg = SimConfig(paths=6_000, dt=0.002, horizon=800.0, seed=5)
        res = dynkin_check(gbm_spec, g, mu, 2.0, ((1.5, 2.7), (1.2, 3.3)),
                           cfg)
        assert abs(res.residual) <= 3.0 * res.std_error + 5e-3

    def test_coincident_bands_zero(self, gbm_spec):
        g = ostop.from_polynomials([], [[0.0, 1.0]], gbm_spec.interval)
        mu = ostop.lop_measure(g, gbm_spec)
        cfg = SimConfig(paths=2_000, dt=0.01, horizon=400.0, seed=5)
        res = dynkin_check(gbm_spec, g, mu, 2.0, ((1.5, 2.7), (1.5, 2.7)),
                           cfg)
        assert res.residual == pytest.approx(0.0, abs=1e-12)

    def test_psi_is_discounted_martingale(self, gbm_spec, gbm_pair,
                                          exponents):
        # g = psi has vanishing operator measure: pure martingale residual
        _, n = exponents
        g = ostop.from_callables(
            [], [lambda x: np.asarray(x, float) ** n],
            [lambda x: n * np.asarray(x, float) ** (n - 1)],
            [lambda x: n * (n - 1) * np.asarray(x, float) ** (n - 2)],
            gbm_spec.interval)
        mu = ostop.lop_measure(g, gbm_spec)
        assert abs(float(mu.density(2.0))) < 1e-14
        cfg = SimConfig(paths=6_000, dt=0.002, horizon=800.0, seed=17)
        res = dynkin_check(gbm_spec, g, mu, 2.0, ((1.5, 2.7), (1.2, 3.3)),
                           cfg)
        assert abs(res.residual) <= 3.0 * res.std_error + 5e-3


class TestPsorOracle:
    def test_matches_analytic_value(self, gbm_spec, solved_c2):
        res = psor_oracle(gbm_spec, solved_c2.solution.payoff,
                          GridSpec(0.1, 40.0, 1200, "log"))
        vf = solved_c2.value_function
        mask = (res.x >= 0.2) & (res.x <= 30.0)
        vt = vf(res.x[mask])
        rel = np.max(np.abs(res.v[mask] - vt) / (1 + np.abs(vt)))
        assert rel < 0.01

    def test_free_boundaries_near_analytic(self, gbm_spec, solved_c2):
        res = psor_oracle(gbm_spec, solved_c2.solution.payoff,
                          GridSpec(0.1, 40.0, 1200, "log"))
        d = solved_c2.solution.diagnostics
        edges = dict(res.free_boundaries())
        h = np.diff(np.log(res.x)).mean()
        assert abs(np.log(edges["left"]) - np.log(d["a"])) < 2.5 * h
        assert abs(np.log(edges["right"]) - np.log(d["b"])) < 2.5 * h

    def test_case_II_returns_payoff(self, gbm_spec):
        g = ostop.from_polynomials([], [[1.0]], gbm_spec.interval)
        res = psor_oracle(gbm_spec, g, GridSpec(0.1, 20.0, 400, "log"))
        assert np.allclose(res.v, res.g, atol=1e-9)

    def test_never_stop_returns_zero(self, gbm_spec):
        # the Dirichlet v = g data at the truncation ends is wrong for a
        # never-stop payoff, but its influence decays toward the interior;
        # use a wide grid and check the middle region
        g = ostop.from_polynomials([], [[-1.0]], gbm_spec.interval)
        res = psor_oracle(gbm_spec, g, GridSpec(1e-6, 1e4, 1200, "log"))
        mid = (res.x > 0.5) & (res.x < 20.0)
        assert np.max(np.abs(res.v[mid])) < 0.02
        assert np.all(res.v >= res.g - 1e-12)
