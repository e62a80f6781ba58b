"""Region partitions, assembled value functions, and the variational
inequality checks: the candidate v must satisfy, in the measure sense,

    -L v >= 0,    v >= g,    L v charges no mass to {v > g},

together with the growth bound |v| <= C (1 + |g|).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContinuityViolation


@dataclass(frozen=True)
class Component:
    """One continuation component, v = A*phi + B*psi on ]lo, hi[."""
    lo: float
    hi: float
    A: float
    B: float


@dataclass(frozen=True)
class BoundaryFit:
    location: float
    side: str          # side of the continuation component: "left"/"right"
    smooth: bool       # smooth fit versus continuous-only


@dataclass(frozen=True)
class RegionPartition:
    continuation: tuple[tuple[float, float], ...]   # open intervals
    stopping: tuple[tuple[float, float], ...]       # closed (may be points)
    domain: tuple[float, float]

    def in_stopping(self, x):
        x = np.asarray(x, float)
        out = np.zeros(x.shape, bool)
        for lo, hi in self.stopping:
            out |= (x >= lo) & (x <= hi)
        return bool(out) if x.ndim == 0 else out

    def tag(self, x):
        return np.where(self.in_stopping(x), "D", "C")

    def boundary_points(self):
        pts = []
        a, b = self.domain
        for lo, hi in self.continuation:
            if lo > a and np.isfinite(lo):
                pts.append((lo, "left"))
            if hi < b and np.isfinite(hi):
                pts.append((hi, "right"))
        return pts


def partition_from_components(domain, comps):
    """Stopping region = closed complement of the continuation components."""
    a, b = domain
    cont = tuple(sorted((c.lo, c.hi) for c in comps))
    stops = []
    cur = a
    for lo, hi in cont:
        if lo > cur:
            stops.append((cur, lo))
        elif lo == cur and np.isfinite(cur) and cur > a:
            stops.append((cur, cur))
        cur = hi
    if cur < b:
        stops.append((cur, b))
    # clip pseudo-endpoints at the open domain ends
    clipped = []
    for lo, hi in stops:
        if lo == a and not np.isfinite(a):
            lo = -np.inf
        if hi == b and not np.isfinite(b):
            hi = np.inf
        clipped.append((lo, hi))
    return RegionPartition(cont, tuple(clipped), domain)


@dataclass(frozen=True)
class ValueFunction:
    partition: RegionPartition
    components: tuple[Component, ...]
    payoff: object                  # PayoffDC
    pair: object                    # FundamentalPair

    def __call__(self, x):
        x = np.asarray(x, float)
        scalar = x.ndim == 0
        xf = np.atleast_1d(x).astype(float)
        out = np.atleast_1d(np.asarray(self.payoff(xf), float)).copy()
        for c in self.components:
            m = (xf > c.lo) & (xf < c.hi)
            if m.any():
                out[m] = c.A * self.pair.phi(xf[m]) + c.B * self.pair.psi(xf[m])
        return float(out[0]) if scalar else out

    def derivative(self, x, side="+"):
        x = float(x)
        for c in self.components:
            inside = (c.lo < x < c.hi) or (x == c.lo and side == "+") \
                or (x == c.hi and side == "-")
            if inside:
                return float(c.A * self.pair.dphi(x) + c.B * self.pair.dpsi(x))
        return float(self.payoff.derivative(x, side))

    def component_at(self, x):
        for c in self.components:
            if c.lo < x < c.hi:
                return c
        return None


def assemble(solution, tol=1e-10) -> "ValueFunction":
    """Piecewise value function from a case solution; continuity at every
    finite boundary is asserted to relative tolerance."""
    vf = ValueFunction(solution.partition, tuple(solution.components),
                       solution.payoff, solution.pair)
    g = solution.payoff
    for c in solution.components:
        for x in (c.lo, c.hi):
            if not np.isfinite(x) or not (g.domain[0] < x < g.domain[1]):
                continue
            v_c = c.A * float(vf.pair.phi(x)) + c.B * float(vf.pair.psi(x))
            g_ref = float(g(x))   # right-continuous: the stopping value
            if abs(v_c - g_ref) > tol * (1.0 + abs(g_ref)):
                raise ContinuityViolation(
                    f"value function discontinuous at {x}: continuation "
                    f"value {v_c!r} vs payoff {g_ref!r}")
    return vf


@dataclass
class VerificationReport:
    entries: dict = field(default_factory=dict)

    CORE = ("hjb_supersolution_density", "hjb_supersolution_atoms",
            "hjb_value_kinks", "dominates_payoff", "no_mass_on_continuation")

    @property
    def passed(self):
        return all(self.entries.get(k, (False, ""))[0] for k in self.CORE)

    def __bool__(self):
        return self.passed

    def summary(self):
        return "\n".join(f"[{'ok' if ok else 'FAIL'}] {k}: {detail}"
                         for k, (ok, detail) in self.entries.items())


def verification_grid(vf, mu=None, n=1000):
    """Log-uniform grid plus every breakpoint, free boundary and atom."""
    a, b = vf.payoff.domain
    sa, sb = vf.pair.eval_bounds()
    a, b = max(a, sa), min(b, sb)
    feats = list(vf.payoff.breakpoints)
    feats += [p for p, _ in vf.partition.boundary_points()]
    if mu is not None:
        feats += [y for y, _ in mu.atoms]
    if not feats:
        feats = [1.0]
    f_lo, f_hi = min(feats), max(feats)
    if a == 0 or (np.isfinite(a) and a >= 0):
        base = np.geomspace(max(max(f_lo, 1e-12) / 64, 1e-12), f_hi * 64, n)
    else:
        span = max(f_hi - f_lo, 1.0)
        base = np.linspace(f_lo - 8 * span, f_hi + 8 * span, n)
    pts = np.concatenate([base, np.asarray(feats, float)])
    return np.unique(pts[(pts > a) & (pts < b)])


def verify_solution(vf: ValueFunction, g, mu, pair, grid=None, spec=None,
                    ineq_tol=1e-8, ode_tol=1e-8) -> VerificationReport:
    """Check the variational-inequality definition on a grid.

    On the stopping region L v = L g, so the operator-measure density and
    atoms restricted there must be nonpositive.  Kinks of v at free
    boundaries must be concave.  On continuation components v is a basis
    combination, so L v = 0 identically; when `spec` is supplied the ODE
    residual is additionally measured by finite differences as a numerical
    guard.  Failures are report entries, never exceptions."""
    rep = VerificationReport()
    xs = verification_grid(vf, mu) if grid is None else np.asarray(grid, float)

    in_stop = vf.partition.in_stopping(xs)
    gx = np.asarray(g(xs), float)
    vx = np.asarray(vf(xs), float)
    scale = 1.0 + np.abs(gx)

    if mu is None:
        rep.entries["hjb_supersolution_density"] = (
            True, "staircase payoff: no operator measure; pasting rules apply")
    else:
        dens = np.asarray(mu.density(xs[in_stop]), float)
        worst = float(np.max(dens / scale[in_stop])) if dens.size else 0.0
        rep.entries["hjb_supersolution_density"] = (
            worst <= ineq_tol, f"max operator density on stopping set = {worst:.3g}")

    atoms_bad = []
    if mu is not None:
        for y, w in mu.atoms:
            interior = any(lo < y < hi or (lo == y == hi)
                           for lo, hi in vf.partition.stopping)
            if interior and w > ineq_tol * (1 + abs(float(g(y)))):
                atoms_bad.append((y, w))
    rep.entries["hjb_supersolution_atoms"] = (
        not atoms_bad, f"positive operator atoms inside stopping set: {atoms_bad}")

    kink_bad = []
    for x, _side in vf.partition.boundary_points():
        jump = vf.derivative(x, "+") - vf.derivative(x, "-")
        if jump > 1e-7 * (1 + abs(float(g(x)))):
            kink_bad.append((round(x, 8), jump))
    rep.entries["hjb_value_kinks"] = (
        not kink_bad, f"convex value kinks at boundaries: {kink_bad}")

    worst = float(np.max((gx - vx) / scale))
    rep.entries["dominates_payoff"] = (
        worst <= ineq_tol, f"max (g - v)/(1+|g|) = {worst:.3g}")

    # boundary points must belong to the closed stopping set (structural)
    stray = [x for x, _ in vf.partition.boundary_points()
             if not vf.partition.in_stopping(x)]
    detail = f"free boundaries outside the stopping set: {stray}"
    ok_struct = not stray

    worst_res = 0.0
    if spec is not None:
        for c in vf.components:
            inner = xs[(xs > c.lo) & (xs < c.hi)]
            if inner.size == 0:
                continue
            for x in inner[:: max(1, inner.size // 25)]:
                h = 1e-4 * max(abs(x), 1.0)
                if not (c.lo < x - h and x + h < c.hi):
                    continue
                v0, vm, vp = vf(x), vf(x - h), vf(x + h)
                res = (0.5 * float(spec.volatility(x)) ** 2
                       * (vp - 2 * v0 + vm) / (h * h)
                       + float(spec.drift(x)) * (vp - vm) / (2 * h)
                       - float(spec.discount(x)) * v0)
                worst_res = max(worst_res, abs(res) / (1 + abs(v0)))
        # finite-difference floor: h^2 truncation ~1e-8 relative at h=1e-4;
        # numerically built pairs carry spline interpolation error on top
        floor = 1e-6 if pair.support is None else 1e-4
        ok_res = worst_res <= max(ode_tol, floor)
        detail += f"; max ODE residual on C = {worst_res:.3g}"
    else:
        ok_res = True
    rep.entries["no_mass_on_continuation"] = (ok_struct and ok_res, detail)

    cmin = float(np.max(np.abs(vx) / scale))
    rep.entries["growth_bound"] = (
        bool(np.isfinite(cmin)), f"minimal sampled C in |v| <= C(1+|g|): {cmin:.6g}")

    interior = ~in_stop
    if interior.any():
        strict = float(np.min((vx - gx)[interior] / scale[interior]))
        rep.entries["strict_separation"] = (
            strict >= -ineq_tol, f"min (v - g)/(1+|g|) on C = {strict:.3g}")
    return rep


@dataclass(frozen=True)
class BoundaryGap:
    location: float
    v_minus_left_slope: float    # v' - g'_-  (<= tol for optimality)
    right_slope_minus_v: float   # g'_+ - v'  (<= tol for optimality)
    smooth: bool
    continuous_only: bool


def smooth_fit_report(vf: ValueFunction, g, tol=1e-6):
    """Per-boundary one-sided derivative gaps.  Smooth fit collapses both to
    zero; at payoff kinks or staircase jumps the subgradient inequalities
    leave one-sided slack and the fit is flagged continuous-only."""
    out = []
    for x, side in vf.partition.boundary_points():
        vprime = vf.derivative(x, "+" if side == "left" else "-")
        gm = float(g.derivative(x, "-"))
        gp = float(g.derivative(x, "+"))
        jumped = g.staircase and x in g.breakpoints and \
            abs(g.value_jumps[g.breakpoints.index(x)]) > 1e-12
        gap1 = (vprime - gm) if not jumped else -np.inf  # V1 vacuous at a jump
        gap2 = gp - vprime
        smooth = (not jumped
                  and max(abs(vprime - gm), abs(gp - vprime))
                  <= tol * (1 + abs(vprime)))
        out.append(BoundaryGap(x, gap1, gap2, smooth,
                               continuous_only=not smooth))
    return out
