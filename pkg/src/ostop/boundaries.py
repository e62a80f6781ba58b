"""Free-boundary location for the six cases: closed-form coefficients for
the single-boundary cases, the two-map crossing procedure for the straddle
case, and interval pasting for staircase payoffs.

The straddle machinery: for a left candidate u in the outer negative
region, l_phi(u) (resp. l_psi(u)) is the right point where the phi- (psi-)
weighted integral of the operator measure over [u, z] vanishes.  Both maps
are increasing; the unique point where l_phi crosses l_psi from below gives
the boundary pair (a, b), and the coefficients follow from continuous fit:

    A = (g(b) psi(a) - g(a) psi(b)) / (phi(b) psi(a) - phi(a) psi(b))
    B = (g(b) phi(a) - g(a) phi(b)) / (phi(a) psi(b) - phi(b) psi(a))
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy.optimize import brentq

from .classifier import Case, TurningPoint
from .errors import (AtomStraddle, MultipleCrossings, NegativeCoefficient,
                     NoCrossing, NonpositiveB, NoRoot, OrderViolation,
                     SingularFitSystem, UnsupportedStaircase)
from .payoff import GreenKernelIntegrals, PayoffDC
from .value import (BoundaryFit, Component, RegionPartition,
                    partition_from_components)

_REL = 1e-10   # boundary location tolerance (relative)


@dataclass(frozen=True)
class QFunctionals:
    """Open/closed interval integrals of the kernel-weighted operator
    measure, plus the sign-structure edges of the positive middle region."""

    gki: GreenKernelIntegrals
    x_l: float
    x_r: float

    def q_phi_open(self, y, z):
        return self.gki.q_phi(y, z, closed=False)

    def q_phi_closed(self, y, z):
        return self.gki.q_phi(y, z, closed=True)

    def q_psi_open(self, y, z):
        return self.gki.q_psi(y, z, closed=False)

    def q_psi_closed(self, y, z):
        return self.gki.q_psi(y, z, closed=True)

    @property
    def window(self):
        return self.gki.window


@dataclass
class BoundaryPair:
    a: float
    b: float
    A: float
    B: float
    fit: tuple[str, str] = ("smooth", "smooth")


@dataclass
class Solution:
    case: Case
    partition: RegionPartition
    components: tuple[Component, ...]
    payoff: PayoffDC
    pair: object
    fits: tuple[BoundaryFit, ...] = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def boundaries(self):
        return [p for p, _ in self.partition.boundary_points()]


def continuous_fit(pair, y, gy, z, gz):
    """Coefficients of A phi + B psi through (y, gy), (z, gz)."""
    det = pair.phi(y) * pair.psi(z) - pair.phi(z) * pair.psi(y)
    if det <= 0:
        raise SingularFitSystem(f"fit matrix singular on ({y}, {z})")
    A = (gy * pair.psi(z) - gz * pair.psi(y)) / det
    B = (gz * pair.phi(y) - gy * pair.phi(z)) / det
    return float(A), float(B)


# -- trivial cases -------------------------------------------------------------

def solve_case_I(g, pair) -> Solution:
    comps = (Component(g.domain[0], g.domain[1], 0.0, 0.0),)
    part = RegionPartition(((g.domain[0], g.domain[1]),), (), g.domain)
    return Solution(Case.I, part, comps, g, pair,
                    diagnostics={"note": "no admissible stopping; value 0"})


def solve_case_II(g, pair) -> Solution:
    part = RegionPartition((), ((g.domain[0], g.domain[1]),), g.domain)
    return Solution(Case.II, part, (), g, pair,
                    diagnostics={"note": "stop immediately everywhere"})


# -- single-boundary cases -------------------------------------------------------

def solve_case_III(tp: TurningPoint, g, pair) -> Solution:
    x = tp.location
    B = float(g(x)) / float(pair.psi(x))
    if B <= 0:
        raise NonpositiveB(f"g({x})/psi({x}) = {B} <= 0: misclassified")
    comps = (Component(g.domain[0], x, 0.0, B),)
    part = partition_from_components(g.domain, comps)
    smooth = abs(B * float(pair.dpsi(x)) - g.derivative(x, "+")) \
        <= 1e-8 * (1 + abs(B * float(pair.dpsi(x))))
    return Solution(Case.III, part, comps, g, pair,
                    fits=(BoundaryFit(x, "right", smooth),),
                    diagnostics={"x_psi": x, "B": B})


def solve_case_IV(tp: TurningPoint, g, pair) -> Solution:
    x = tp.location
    A = float(g(x)) / float(pair.phi(x))
    if A <= 0:
        raise NonpositiveB(f"g({x})/phi({x}) = {A} <= 0: misclassified")
    comps = (Component(x, g.domain[1], A, 0.0),)
    part = partition_from_components(g.domain, comps)
    smooth = abs(A * float(pair.dphi(x)) - g.derivative(x, "-")) \
        <= 1e-8 * (1 + abs(A * float(pair.dphi(x))))
    return Solution(Case.IV, part, comps, g, pair,
                    fits=(BoundaryFit(x, "left", smooth),),
                    diagnostics={"x_phi": x, "A": A})


def solve_case_V(tp_psi: TurningPoint, tp_phi: TurningPoint, g, pair) -> Solution:
    if tp_psi.location > tp_phi.location:
        raise OrderViolation(
            f"x_psi = {tp_psi.location} > x_phi = {tp_phi.location}")
    left = solve_case_III(tp_psi, g, pair)
    right = solve_case_IV(tp_phi, g, pair)
    comps = left.components + right.components
    part = partition_from_components(g.domain, comps)
    return Solution(Case.V, part, comps, g, pair,
                    fits=left.fits + right.fits,
                    diagnostics={**left.diagnostics, **right.diagnostics})


# -- straddle case ----------------------------------------------------------------

def _l_map(u, q: QFunctionals, weight: str):
    """Right companion of u: the z > x_r where the weighted integral over
    [u, z] returns to zero.  Monotone increasing in u."""
    qf = q.q_phi_closed if weight == "phi" else q.q_psi_closed
    top = qf(u, q.x_r)
    tol = 1e-13 * (1 + abs(top))
    if top < -tol:
        raise NoRoot(f"no root: integral already negative at the middle "
                     f"region ({weight}, u={u}, top={top})")
    lo = q.x_r
    hi = q.window[1]
    if qf(u, hi) > 0:
        raise NoRoot(f"root beyond the truncation window ({weight}, u={u})")
    # migrate off an atom at the left bracket edge (q is right-continuous)
    span = hi - lo
    f = lambda z: qf(u, z)
    zlo = lo
    flo = top
    if flo == 0.0:
        return lo
    z = brentq(f, zlo + 1e-13 * max(1.0, abs(zlo)), hi,
               xtol=1e-14, rtol=4 * np.finfo(float).eps)
    for y, w in q.gki.mu.atoms:
        if y > q.x_r and abs(z - y) <= 1e-9 * max(1.0, abs(y)):
            raise AtomStraddle(f"l_{weight} root sits on the atom at {y}",
                               location=y, bracket=(f(y * (1 - 1e-9)), f(y)))
    return z


def l_phi_map(u, q: QFunctionals):
    return _l_map(u, q, "phi")


def l_psi_map(u, q: QFunctionals):
    return _l_map(u, q, "psi")


def _admissible_range(q: QFunctionals, weight: str):
    """Interval of u < x_l on which the map exists: the weighted mass of the
    middle region must dominate the accumulated left mass (lower endpoint),
    and the root must fall inside the truncation (upper constraint)."""
    qf = q.q_phi_closed if weight == "phi" else q.q_psi_closed
    w_lo = q.window[0]
    eps = 1e-9 * max(1.0, abs(q.x_l))
    u_hi = q.x_l - eps
    top = lambda u: qf(u, q.x_r)
    end = lambda u: qf(u, q.window[1])
    if top(u_hi) < 0:
        return None
    if top(w_lo) >= 0:
        u_min = w_lo
    else:
        u_min = brentq(top, w_lo, u_hi, xtol=1e-14,
                       rtol=4 * np.finfo(float).eps)
    if end(u_hi) <= 0:
        u_max = u_hi
    elif end(u_min) >= 0:
        return None
    else:
        u_max = brentq(end, u_min, u_hi, xtol=1e-14,
                       rtol=4 * np.finfo(float).eps)
    if not u_min < u_max:
        return None
    return (u_min, u_max)


def solve_case_VI(q: QFunctionals, g, pair, case=Case.VI,
                  n_samples=64) -> Solution:
    """Bracketed root of Delta(u) = l_phi(u) - l_psi(u) over the common
    admissible range; exactly one sign change is required.  The returned
    pair must satisfy the four open/closed q-inequalities and yield
    nonnegative coefficients."""
    mu = q.gki.mu
    for y, w in mu.atoms:
        if not (q.x_l <= y <= q.x_r):
            raise NoCrossing(
                f"operator atom at {y} outside the middle region "
                f"[{q.x_l}, {q.x_r}]: two-boundary theory unavailable")

    attempts = 0
    while True:
        r_phi = _admissible_range(q, "phi")
        r_psi = _admissible_range(q, "psi")
        if r_phi and r_psi:
            u_lo = max(r_phi[0], r_psi[0])
            u_hi = min(r_phi[1], r_psi[1])
            if u_lo < u_hi:
                break
        # a truncation-limited range can masquerade as non-existence: widen
        # once before giving up
        if attempts >= 1:
            raise NoCrossing(f"empty admissible range for the boundary maps "
                             f"(phi: {r_phi}, psi: {r_psi})")
        q = QFunctionals(q.gki.widened(), q.x_l, q.x_r)
        attempts += 1

    margin = 1e-9 * (u_hi - u_lo)
    us = np.linspace(u_lo + margin, u_hi - margin, n_samples)
    if u_lo > 0:
        us = np.geomspace(u_lo + margin, u_hi - margin, n_samples)

    def delta(u):
        return l_phi_map(u, q) - l_psi_map(u, q)

    dvals = np.array([delta(u) for u in us])
    flips = [i for i in range(len(us) - 1)
             if np.sign(dvals[i]) != np.sign(dvals[i + 1]) and dvals[i] != 0]
    if not flips:
        raise NoCrossing(
            f"the boundary maps do not cross on [{u_lo:.6g}, {u_hi:.6g}]: "
            f"Delta in [{dvals.min():.3g}, {dvals.max():.3g}]")
    if len(flips) > 1:
        raise MultipleCrossings(
            f"Delta changes sign {len(flips)} times; candidates near "
            f"{[0.5 * (us[i] + us[i + 1]) for i in flips]}")
    i = flips[0]
    a = brentq(delta, us[i], us[i + 1], xtol=1e-14, rtol=4 * np.finfo(float).eps)
    b_phi, b_psi = l_phi_map(a, q), l_psi_map(a, q)
    if abs(b_phi - b_psi) > 1e-6 * max(1.0, abs(b_phi)):
        raise NoCrossing(f"map values disagree at the crossing: "
                         f"l_phi={b_phi}, l_psi={b_psi}")
    b = 0.5 * (b_phi + b_psi)

    A, B = continuous_fit(pair, a, float(g(a)), b, float(g(b)))
    scale = 1.0 + abs(A) + abs(B)
    if A < -1e-9 * scale or B < -1e-9 * scale:
        raise NegativeCoefficient(f"A={A}, B={B} violate nonnegativity")

    qtol = 1e-8 * (1 + abs(q.q_phi_closed(q.x_l, q.x_r)))
    diags = {
        "a": a, "b": b, "A": A, "B": B,
        "q_phi_open": q.q_phi_open(a, b), "q_phi_closed": q.q_phi_closed(a, b),
        "q_psi_open": q.q_psi_open(a, b), "q_psi_closed": q.q_psi_closed(a, b),
        # coefficient identities against the one-sided tail integrals
        "B_from_tail_open": -q.gki.phi_tail(b, closed=False),
        "B_from_tail_closed": -q.gki.phi_tail(b, closed=True),
        "A_from_head_open": -q.gki.psi_head(a, closed=False),
        "A_from_head_closed": -q.gki.psi_head(a, closed=True),
        # crossing slope ratio must exceed 1 (l_phi crosses from below)
        "slope_ratio": float(pair.phi(a) * pair.psi(b)
                             / (pair.phi(b) * pair.psi(a))),
    }
    checks_ok = (diags["q_phi_open"] >= -qtol and diags["q_phi_closed"] <= qtol
                 and diags["q_psi_open"] >= -qtol and diags["q_psi_closed"] <= qtol)
    if not checks_ok:
        raise NoCrossing(f"crossing found but the q-inequalities fail: {diags}")

    comps = (Component(a, b, A, B),)
    part = partition_from_components(g.domain, comps)
    fits = (BoundaryFit(a, "left", True), BoundaryFit(b, "right", True))
    return Solution(case, part, comps, g, pair, fits=fits, diagnostics=diags)


# -- staircase pasting -------------------------------------------------------------

def _stair_smooth_fit_condition(pair, y, gy, z, gz, gprime_right=0.0):
    """The continuous-fit solution through (y, gy), (z, gz) keeps the value
    above the payoff just right of y iff v'(y+) >= g'_+(y)."""
    A, B = continuous_fit(pair, y, gy, z, gz)
    vprime = A * float(pair.dphi(y)) + B * float(pair.dpsi(y))
    return vprime >= gprime_right - 1e-12 * (1 + abs(vprime)), (A, B, vprime)


def _detach_left_boundary(pair, g, y, z):
    """Smooth-fit left boundary strictly inside ]y, z[: find a* with
    v(a*) = g(a*), v'(a*) = g'_+(a*) and v(z) = g(z)."""
    gz = float(g(z))

    def mismatch(astar):
        ga, dga = float(g(astar)), float(g.derivative(astar, "+"))
        det = (pair.phi(astar) * pair.dpsi(astar)
               - pair.dphi(astar) * pair.psi(astar))
        A = (ga * float(pair.dpsi(astar)) - dga * float(pair.psi(astar))) / det
        B = (dga * float(pair.phi(astar)) - ga * float(pair.dphi(astar))) / det
        return A * float(pair.phi(z)) + B * float(pair.psi(z)) - gz, (A, B)

    lo = y + 1e-9 * max(1.0, abs(y))
    hi = z - 1e-9 * max(1.0, abs(z))
    f = lambda t: mismatch(t)[0]
    if f(lo) * f(hi) > 0:
        raise NoRoot(f"no detached smooth-fit boundary in ]{y}, {z}[")
    astar = brentq(f, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    _, (A, B) = mismatch(astar)
    return astar, A, B


def paste_intervals(g: PayoffDC, pair, prune_tol=1e-10) -> Solution:
    """Global solution for staircase payoffs: candidate stopping atoms at
    the jump points, domination-based pruning, continuous fit between the
    survivors, and the smooth-fit test deciding whether a left boundary
    stays at the jump point or detaches into a stopping interval."""
    ys = list(g.breakpoints)
    if not ys:
        raise UnsupportedStaircase("staircase payoff without jump points")
    jumps = g.value_jumps
    if any(j <= 0 for j in jumps):
        raise UnsupportedStaircase(
            "interval pasting requires upward value jumps at every breakpoint")
    a0, b0 = g.domain
    base_probe = np.geomspace(max(ys[0] / 64, 1e-12), ys[0], 33)[:-1] \
        if a0 >= 0 else np.linspace(ys[0] - 8, ys[0], 33)[:-1]
    if np.any(np.asarray(g(base_probe), float) > 1e-12):
        raise UnsupportedStaircase(
            "base piece must be <= 0: a positive floor level has no "
            "single-component continuation toward the lower boundary")
    tail_probe = np.geomspace(ys[-1], ys[-1] * 64, 33)[1:] if b0 > 0 else \
        np.linspace(ys[-1], ys[-1] + 8, 33)[1:]
    gl = float(g(ys[-1]))
    if gl <= 0 or np.any(np.abs(np.asarray(g(tail_probe), float) - gl) > 1e-9 * (1 + gl)):
        raise UnsupportedStaircase(
            "terminal piece must be a positive constant level")

    # prune candidates dominated by continuing across them
    keep = list(ys)
    while len(keep) > 1:
        worst_i, worst_gain = None, prune_tol
        for i, y in enumerate(keep[:-1]):   # the terminal candidate survives
            rn = keep[i + 1]
            if i == 0:
                v_merge = float(g(rn)) / float(pair.psi(rn)) * float(pair.psi(y))
            else:
                A, B = continuous_fit(pair, keep[i - 1], float(g(keep[i - 1])),
                                      rn, float(g(rn)))
                v_merge = A * float(pair.phi(y)) + B * float(pair.psi(y))
            gain = (v_merge - float(g(y))) / (1 + abs(float(g(y))))
            if gain > worst_gain:
                worst_i, worst_gain = i, gain
        if worst_i is None:
            break
        keep.pop(worst_i)

    comps = []
    fits = []
    stops = []
    # leftmost component pastes to the first survivor with A = 0
    s0 = keep[0]
    B0 = float(g(s0)) / float(pair.psi(s0))
    if B0 <= 0:
        raise NonpositiveB(f"leftmost coefficient {B0} <= 0")
    comps.append(Component(a0, s0, 0.0, B0))
    fits.append(BoundaryFit(s0, "right", False))

    for y, z in zip(keep[:-1], keep[1:]):
        ok, (A, B, vprime) = _stair_smooth_fit_condition(
            pair, y, float(g(y)), z, float(g(z)),
            gprime_right=float(g.derivative(y, "+")))
        if ok:
            comps.append(Component(y, z, A, B))
            fits.append(BoundaryFit(y, "left", False))
            fits.append(BoundaryFit(z, "right", False))
            stops.append((y, y))
        else:
            astar, A, B = _detach_left_boundary(pair, g, y, z)
            comps.append(Component(astar, z, A, B))
            fits.append(BoundaryFit(astar, "left", True))
            fits.append(BoundaryFit(z, "right", False))
            stops.append((y, astar))
        if A < -1e-9 or B < -1e-9:
            raise NegativeCoefficient(
                f"pasted component on ]{y}, {z}[ has A={A}, B={B}")

    part = partition_from_components(g.domain, comps)
    case = Case.III if len(keep) == 1 else Case.VI
    return Solution(case, part, tuple(comps), g, pair, fits=tuple(fits),
                    diagnostics={"survivors": keep,
                                 "pruned": [y for y in ys if y not in keep],
                                 "mode": "staircase"})
