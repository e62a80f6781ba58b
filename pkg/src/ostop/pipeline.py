"""End-to-end orchestration: validate the diffusion, build the operator
measure, run the well-posedness gates, classify, locate the boundaries,
assemble the value function and verify it."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import boundaries as bnd
from . import classifier as clf
from . import payoff as pf
from . import value as val
from . import verify as ver
from .diffusion import DiffusionSpec, fundamental_solutions, validate_diffusion
from .errors import (MultipleCrossings, NegativeCoefficient, NoCrossing,
                     Unclassifiable)


@dataclass
class SolverOptions:
    scan_points: int = 2048
    window: Optional[tuple] = None
    verify_level: str = "fast"          # none | fast | full
    sim: ver.SimConfig = field(default_factory=lambda: ver.SimConfig(
        paths=20_000, dt=0.05, horizon=1500.0, seed=0))
    psor: Optional[ver.GridSpec] = None
    mc_x0: Optional[float] = None


@dataclass
class SolveOutcome:
    status: str                         # solved | solved-with-warnings | rejected | unclassifiable
    case: Optional[clf.Case]
    solution: Optional[bnd.Solution]
    value_function: Optional[val.ValueFunction]
    classification: Optional[clf.Classification]
    validation: object = None
    integrability: object = None
    growth: object = None
    verification: object = None
    smooth_fit: object = None
    mc: object = None
    psor: object = None
    runtime: float = 0.0
    messages: list = field(default_factory=list)

    @property
    def exit_code(self):
        return {"solved": 0, "solved-with-warnings": 2,
                "rejected": 3, "unclassifiable": 4}[self.status]


def solve_stopping_problem(spec: DiffusionSpec, g: pf.PayoffDC,
                           opts: SolverOptions | None = None) -> SolveOutcome:
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    out = SolveOutcome("solved", None, None, None, None)
    out.validation = validate_diffusion(spec)
    pair = fundamental_solutions(spec, window=opts.window)

    if g.staircase and any(abs(j) > 1e-12 for j in g.value_jumps):
        growth = pf.check_growth_limits(g, pair)
        out.growth = growth
        if not growth.ok_beta:
            out.status = "rejected"
            out.messages.append("staircase payoff grows as fast as psi toward "
                                "the upper boundary")
            out.runtime = time.perf_counter() - t0
            return out
        solution = bnd.paste_intervals(g, pair)
        out.solution = solution
        out.case = solution.case
        out.value_function = val.assemble(solution)
        if opts.verify_level != "none":
            out.verification = val.verify_solution(out.value_function, g,
                                                   None, pair, spec=spec)
            out.smooth_fit = val.smooth_fit_report(out.value_function, g)
            if not out.verification.passed:
                out.status = "solved-with-warnings"
        out.runtime = time.perf_counter() - t0
        return out

    mu = pf.lop_measure(g, spec)
    integ = pf.check_integrability(mu, pair)
    growth = pf.check_growth_limits(g, pair)
    out.integrability, out.growth = integ, growth
    if not integ:
        out.status = "rejected"
        out.messages.append(
            f"operator measure is not (phi,psi)-integrable: {integ.note}")
        out.runtime = time.perf_counter() - t0
        return out
    if not growth:
        out.status = "rejected"
        side = "lower" if not growth.ok_alpha else "upper"
        out.messages.append(
            f"|g| does not vanish relative to the fundamental solution at "
            f"the {side} boundary")
        out.runtime = time.perf_counter() - t0
        return out

    gki = pf.GreenKernelIntegrals(mu, pair, window=opts.window)
    pattern = clf.sign_partition(mu, window=gki.window, n_scan=opts.scan_points)
    tp = clf.TurningPoints(
        clf.turning_point_psi(g, mu, pair, gki=gki, n_scan=opts.scan_points),
        clf.turning_point_phi(g, mu, pair, gki=gki, n_scan=opts.scan_points))
    try:
        cls = clf.classify(pattern, tp, g, pair)
    except Unclassifiable as exc:
        out.status = "unclassifiable"
        out.messages.append(str(exc))
        out.runtime = time.perf_counter() - t0
        return out
    out.classification = cls
    out.case = cls.case

    try:
        solution = _dispatch(cls, pattern, tp, g, mu, pair, gki)
    except (NoCrossing, NegativeCoefficient) as exc:
        # two-boundary system unsolvable with nonnegative coefficients:
        # fall back to immediate stopping and let verification judge it
        out.messages.append(f"two-boundary solve failed ({exc}); falling "
                            "back to stop-everywhere")
        solution = bnd.solve_case_II(g, pair)
        out.case = solution.case
    except MultipleCrossings as exc:
        out.status = "unclassifiable"
        out.messages.append(str(exc))
        out.runtime = time.perf_counter() - t0
        return out
    out.solution = solution
    out.case = solution.case
    out.value_function = val.assemble(solution)
    if opts.verify_level != "none":
        out.verification = val.verify_solution(out.value_function, g, mu,
                                               pair, spec=spec)
        out.smooth_fit = val.smooth_fit_report(out.value_function, g)
        if not out.verification.passed:
            out.status = "solved-with-warnings"

    if opts.verify_level == "full":
        x0 = opts.mc_x0 or _default_x0(out.value_function)
        if x0 is not None:
            out.mc = ver.perturbation_test(spec, g, solution, x0, [0.1],
                                           opts.sim)
        psor_grid = opts.psor or _default_psor_grid(g)
        out.psor = ver.psor_oracle(spec, g, psor_grid)
    out.runtime = time.perf_counter() - t0
    return out


def _dispatch(cls, pattern, tp, g, mu, pair, gki):
    case = cls.case
    if case == clf.Case.I:
        return bnd.solve_case_I(g, pair)
    if case == clf.Case.II:
        return bnd.solve_case_II(g, pair)
    if case == clf.Case.III:
        return bnd.solve_case_III(tp.x_psi, g, pair)
    if case == clf.Case.IV:
        return bnd.solve_case_IV(tp.x_phi, g, pair)
    if case == clf.Case.V:
        return bnd.solve_case_V(tp.x_psi, tp.x_phi, g, pair)
    q = bnd.QFunctionals(gki, pattern.x_l, pattern.x_r)
    return bnd.solve_case_VI(q, g, pair, case=case)


def _default_x0(vf):
    for c in vf.components:
        if np.isfinite(c.lo) and np.isfinite(c.hi):
            return float(np.sqrt(c.lo * c.hi)) if c.lo > 0 else 0.5 * (c.lo + c.hi)
    return None


def _default_psor_grid(g):
    feats = list(g.breakpoints) or [1.0]
    lo, hi = min(feats), max(feats)
    a, b = g.domain
    if a >= 0:
        return ver.GridSpec(max(lo / 20, 1e-4), hi * 15, 2000, "log")
    return ver.GridSpec(lo - 10, hi + 10, 2000, "linear")
