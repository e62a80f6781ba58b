"""Difference-of-convex payoffs, the operator measure

    L g(dx) = (1/2) sigma^2(x) g''(dx) + b(x) g'_-(x) dx - r(x) g(x) dx,

and the well-posedness gates.  Kinks of g carry Dirac atoms of weight
(1/2) sigma^2(y) (g'_+(y) - g'_-(y)); value jumps are allowed only in
staircase mode, where the measure does not exist and interval pasting is
used instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import diffusion as diff
from .errors import (IdentityMismatch, IntegrabilityFailure,
                     StaircaseModeRequired)
from .quadrature import CumulativeIntegral, TailEstimate, tail_integral

_KINK_TOL = 1e-11


@dataclass(frozen=True)
class PayoffPiece:
    f: Callable
    df: Callable
    d2f: Callable


@dataclass(frozen=True)
class PayoffDC:
    """Piecewise-C^2 payoff with finitely many kinks (and, in staircase
    mode, upward value jumps) at interior breakpoints."""

    breakpoints: tuple[float, ...]
    pieces: tuple[PayoffPiece, ...]
    domain: tuple[float, float]
    staircase: bool = False

    def __post_init__(self):
        bp = self.breakpoints
        if len(self.pieces) != len(bp) + 1:
            raise ValueError("need len(pieces) == len(breakpoints) + 1")
        if any(b2 <= b1 for b1, b2 in zip(bp, bp[1:])):
            raise ValueError("breakpoints must be strictly increasing")
        a, b = self.domain
        if bp and not (a < bp[0] and bp[-1] < b):
            raise ValueError("breakpoints must be interior to the domain")
        if not self.staircase:
            bad = [y for y, j in zip(bp, self.value_jumps)
                   if abs(j) > _KINK_TOL * (1 + abs(self(y)))]
            if bad:
                raise ValueError(f"payoff discontinuous at {bad}; "
                                 "enable staircase mode for value jumps")

    # evaluation is right-continuous: at a breakpoint the right piece applies
    def _piece_index(self, x, side="+"):
        return np.searchsorted(self.breakpoints, x,
                               side="right" if side == "+" else "left")

    def _apply(self, x, attr, side="+"):
        if isinstance(x, (float, int)):
            k = int(np.searchsorted(self.breakpoints, x,
                                    side="right" if side == "+" else "left"))
            return float(getattr(self.pieces[k], attr)(x))
        x = np.asarray(x, float)
        scalar = x.ndim == 0
        xf = np.atleast_1d(x)
        idx = self._piece_index(xf, side)
        out = np.empty_like(xf)
        for k, piece in enumerate(self.pieces):
            m = idx == k
            if m.any():
                out[m] = getattr(piece, attr)(xf[m])
        return float(out[0]) if scalar else out

    def __call__(self, x):
        return self._apply(x, "f", "+")

    def left_value(self, x):
        return self._apply(x, "f", "-")

    def derivative(self, x, side="+"):
        return self._apply(x, "df", side)

    def second_derivative(self, x, side="+"):
        return self._apply(x, "d2f", side)

    @cached_property
    def value_jumps(self):
        return tuple(float(self._apply(y, "f", "+") - self._apply(y, "f", "-"))
                     for y in self.breakpoints)

    @cached_property
    def kink_jumps(self):
        return tuple(float(self._apply(y, "df", "+") - self._apply(y, "df", "-"))
                     for y in self.breakpoints)

    def scaled(self, lam):
        pieces = tuple(PayoffPiece(
            f=(lambda p: lambda x: lam * p.f(x))(p),
            df=(lambda p: lambda x: lam * p.df(x))(p),
            d2f=(lambda p: lambda x: lam * p.d2f(x))(p)) for p in self.pieces)
        return PayoffDC(self.breakpoints, pieces, self.domain, self.staircase)


def from_polynomials(breakpoints, coefficients, domain, staircase=False):
    """Pieces given by polynomial coefficient lists (ascending powers)."""
    pieces = []
    for coeffs in coefficients:
        p = np.polynomial.Polynomial(coeffs)
        pieces.append(PayoffPiece(f=p, df=p.deriv(), d2f=p.deriv(2)))
    return PayoffDC(tuple(float(b) for b in breakpoints), tuple(pieces),
                    tuple(domain), staircase)


def from_callables(breakpoints, funcs, dfuncs, d2funcs, domain, staircase=False):
    pieces = tuple(PayoffPiece(f, df, d2f)
                   for f, df, d2f in zip(funcs, dfuncs, d2funcs))
    return PayoffDC(tuple(float(b) for b in breakpoints), pieces,
                    tuple(domain), staircase)


def kinked_linear(c, kink=2.0, domain=(0.0, np.inf)):
    """Constant c left of the kink, slope-one ramp c + (x - kink) beyond."""
    return from_polynomials([kink], [[c], [c - kink, 1.0]], domain)


def staircase(jump_points, levels, domain=(0.0, np.inf)):
    """Right-continuous step payoff: levels[k] on [jump_points[k-1], jump_points[k][."""
    if len(levels) != len(jump_points) + 1:
        raise ValueError("need len(levels) == len(jump_points) + 1")
    return from_polynomials(jump_points, [[float(v)] for v in levels],
                            domain, staircase=True)


def linear_combination(payoffs, weights):
    """Pointwise sum of weighted payoffs (breakpoints are merged; each
    member contributes the piece active on the merged segment, so one-sided
    limits at the merged breakpoints stay correct)."""
    if any(p.staircase for p in payoffs):
        raise ValueError("linear combinations of staircase payoffs unsupported")
    domain = payoffs[0].domain
    breaks = sorted({b for p in payoffs for b in p.breakpoints})
    a, b = domain
    edges = [a] + breaks + [b]

    pieces = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        if np.isfinite(lo) and np.isfinite(hi):
            mid = 0.5 * (lo + hi)
        elif np.isfinite(lo):
            mid = lo + 1.0
        else:
            mid = hi - 1.0
        active = [p.pieces[int(p._piece_index(mid))] for p in payoffs]

        def make(active=tuple(active)):
            return PayoffPiece(
                f=lambda x: sum(w * q.f(x) for w, q in zip(weights, active)),
                df=lambda x: sum(w * q.df(x) for w, q in zip(weights, active)),
                d2f=lambda x: sum(w * q.d2f(x) for w, q in zip(weights, active)))

        pieces.append(make())
    return PayoffDC(tuple(breaks), tuple(pieces), domain)


# -- operator measure ----------------------------------------------------------

@dataclass(frozen=True)
class SignedMeasure:
    """Absolutely continuous density plus finitely many interior atoms."""

    density: Callable
    atoms: tuple[tuple[float, float], ...]
    domain: tuple[float, float]
    breaks: tuple[float, ...] = ()

    @cached_property
    def _atom_map(self):
        return dict(self.atoms)

    def atom_at(self, y):
        return self._atom_map.get(y, 0.0)

    def atoms_between(self, lo, hi, include_lo=True, include_hi=True):
        out = []
        for y, w in self.atoms:
            if (lo < y < hi) or (include_lo and y == lo) or (include_hi and y == hi):
                out.append((y, w))
        return out

    def scaled(self, lam):
        return SignedMeasure(
            density=lambda x, _d=self.density: lam * np.asarray(_d(x), float),
            atoms=tuple((y, lam * w) for y, w in self.atoms),
            domain=self.domain, breaks=self.breaks)


def lop_measure(g: PayoffDC, spec: diff.DiffusionSpec) -> SignedMeasure:
    """Density (1/2) sigma^2 g'' + b g'_- - r g per piece; one atom of weight
    (1/2) sigma^2(y) * (g'_+(y) - g'_-(y)) at each kink."""
    if any(abs(j) > _KINK_TOL * (1 + abs(g(y)))
           for y, j in zip(g.breakpoints, g.value_jumps)):
        raise StaircaseModeRequired(
            "payoff has value jumps; the operator measure does not exist "
            "there; use interval pasting")

    def density(x):
        x = np.asarray(x, float)
        return (0.5 * np.asarray(spec.volatility(x), float) ** 2
                * g.second_derivative(x, "+")
                + np.asarray(spec.drift(x), float) * g.derivative(x, "-")
                - np.asarray(spec.discount(x), float) * g(x))

    atoms = tuple((y, 0.5 * float(spec.volatility(y)) ** 2 * j)
                  for y, j in zip(g.breakpoints, g.kink_jumps)
                  if abs(j) > _KINK_TOL)
    return SignedMeasure(density=density, atoms=atoms, domain=spec.interval,
                         breaks=g.breakpoints)


# -- Green-kernel integrals -----------------------------------------------------

class GreenKernelIntegrals:
    """Cached running integrals of the kernel-weighted operator measure:

        F(x) = int_{]alpha, x]} knorm*Psi dLg      (left head, psi-weighted)
        R(x) = int_{[x, beta[}  knorm*Phi dLg      (right tail, phi-weighted)

    plus the open/closed interval q-functionals built from them.  knorm is
    the pair's green_norm.  The absolutely continuous part on [window.lo,
    window.hi] is a spline antiderivative; mass beyond the window is picked
    up by geometric tail integration.
    """

    def __init__(self, mu: SignedMeasure, pair: diff.FundamentalPair,
                 window=None, margin=64.0):
        self.mu = mu
        self.pair = pair
        self.knorm = pair.green_norm
        a, b = effective_bounds(mu.domain, pair)
        lo, hi = window or default_window(mu, margin=margin)
        lo, hi = max(lo, a if np.isfinite(a) else lo), min(hi, b if np.isfinite(b) else hi)
        if np.isfinite(a) and a > 0:
            lo = max(lo, a)
        self.window = (lo, hi)
        k = self.knorm
        self._cum_psi = CumulativeIntegral(
            lambda s: k * pair.cap_psi(s) * np.asarray(mu.density(s), float),
            lo, hi, breaks=mu.breaks)
        self._cum_phi = CumulativeIntegral(
            lambda s: k * pair.cap_phi(s) * np.asarray(mu.density(s), float),
            lo, hi, breaks=mu.breaks)
        self._tail_left = tail_integral(
            lambda s: k * pair.cap_psi(s) * np.asarray(mu.density(s), float),
            lo, a)
        self._tail_right = tail_integral(
            lambda s: k * pair.cap_phi(s) * np.asarray(mu.density(s), float),
            hi, b)
        for y, _ in mu.atoms:
            if not lo < y < hi:
                raise ValueError("window must contain every atom")

    # weighted atom masses
    def _atom_psi(self, y):
        return self.knorm * float(self.pair.cap_psi(y)) * self.mu.atom_at(y)

    def _atom_phi(self, y):
        return self.knorm * float(self.pair.cap_phi(y)) * self.mu.atom_at(y)

    def psi_head(self, x, closed=True):
        """int over ]alpha, x] (closed) or ]alpha, x[ (open) of knorm*Psi dLg."""
        lo, _ = self.window
        val = self._tail_left.value + self._cum_psi.between(lo, x)
        for y, _ in self.mu.atoms:
            if y < x or (closed and y == x):
                val += self._atom_psi(y)
        return val

    def phi_tail(self, x, closed=True):
        """int over [x, beta[ (closed) or ]x, beta[ (open) of knorm*Phi dLg."""
        _, hi = self.window
        val = self._tail_right.value + self._cum_phi.between(x, hi)
        for y, _ in self.mu.atoms:
            if y > x or (closed and y == x):
                val += self._atom_phi(y)
        return val

    def q_psi(self, y, z, closed=True):
        """int over [y, z] (closed) or ]y, z[ (open) of knorm*Psi dLg."""
        val = self._cum_psi.between(y, z)
        for loc, _ in self.mu.atoms_between(y, z, closed, closed):
            val += self._atom_psi(loc)
        return val

    def q_phi(self, y, z, closed=True):
        val = self._cum_phi.between(y, z)
        for loc, _ in self.mu.atoms_between(y, z, closed, closed):
            val += self._atom_phi(loc)
        return val

    def widened(self, factor=8.0):
        lo, hi = self.window
        new = (lo / factor if lo > 0 else lo - (hi - lo) * factor,
               hi * factor if hi > 0 else hi + (hi - lo) * factor)
        return GreenKernelIntegrals(self.mu, self.pair, window=new)


def effective_bounds(domain, pair):
    """The integration range: the domain clipped to the pair's trustworthy
    evaluation support (the ODE truncation window for numerical pairs)."""
    a, b = domain
    sa, sb = pair.eval_bounds()
    return max(a, sa), min(b, sb)


def default_window(mu: SignedMeasure, margin=64.0):
    """Geometric (or additive) margins around the measure's feature points,
    clipped inside the domain."""
    a, b = mu.domain
    feats = list(mu.breaks) + [y for y, _ in mu.atoms]
    if not feats:
        feats = [1.0] if (np.isfinite(a) and a >= 0) or a == 0 else [0.0]
    f_lo, f_hi = min(feats), max(feats)
    if a == 0 or (np.isfinite(a) and a >= 0):
        lo = max(f_lo, 1e-12) / margin
        lo = max(lo, a + (f_lo - a) / (margin * 8) if np.isfinite(a) else lo)
        hi = max(f_hi, 1e-12) * margin
    else:
        span = max(f_hi - f_lo, 1.0)
        lo, hi = f_lo - margin / 8 * span, f_hi + margin / 8 * span
    if np.isfinite(a):
        lo = max(lo, a + 1e-12 * max(1.0, abs(a)) + (0.0 if a else 0.0))
        if a == 0.0:
            lo = max(lo, 1e-14)
    if np.isfinite(b):
        hi = min(hi, b - 1e-12 * max(1.0, abs(b)))
    return (lo, hi)


# -- well-posedness gates --------------------------------------------------------

@dataclass
class IntegrabilityResult:
    integrable: bool
    left: TailEstimate
    right: TailEstimate
    gamma: float
    note: str = ""

    def __bool__(self):
        return self.integrable


def check_integrability(mu: SignedMeasure, pair: diff.FundamentalPair,
                        gamma=None) -> IntegrabilityResult:
    """Numerical test of (phi,psi)-integrability: int Psi d|mu| near alpha
    and int Phi d|mu| near beta must both converge (geometric tail-ratio
    test).  Inconclusive tails count as failure."""
    a, b = effective_bounds(mu.domain, pair)
    if gamma is None:
        lo, hi = default_window(mu, margin=2.0)
        gamma = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
    k = pair.green_norm
    left = tail_integral(
        lambda s: k * pair.cap_psi(s) * np.abs(np.asarray(mu.density(s), float)),
        gamma, a, breaks=mu.breaks)
    right = tail_integral(
        lambda s: k * pair.cap_phi(s) * np.abs(np.asarray(mu.density(s), float)),
        gamma, b, breaks=mu.breaks)
    # atoms are finitely many interior points: always integrable
    note = ""
    if not left.converged:
        note = f"psi-weighted mass diverges toward {a}: {left.note}"
    elif not right.converged:
        note = f"phi-weighted mass diverges toward {b}: {right.note}"
    return IntegrabilityResult(bool(left.converged and right.converged),
                               left, right, gamma, note)


@dataclass
class GrowthResult:
    ok_alpha: bool
    ok_beta: bool
    ratios_alpha: list
    ratios_beta: list

    def __bool__(self):
        return self.ok_alpha and self.ok_beta


def check_growth_limits(g: PayoffDC, pair: diff.FundamentalPair,
                        window=None, n_probe=48) -> GrowthResult:
    """Probe |g|/phi toward alpha and |g|/psi toward beta along geometric
    sequences; the limit counts as zero when the ratios decay monotonically
    (strictly, beyond a tolerance) or fall below an absolute floor.  Payoffs
    proportional to phi or psi give constant ratios and fail.

    The probes march with the true boundary's geometry but stop at the
    pair's evaluation support (the truncation window for numerical pairs)."""
    a_true, b_true = g.domain
    a, b = effective_bounds(g.domain, pair)
    if window is None:
        lo, hi = default_window(
            SignedMeasure(lambda x: 0.0, (), g.domain, g.breakpoints), margin=4.0)
    else:
        lo, hi = window
    lo, hi = max(lo, a), min(hi, b)

    def probes(z0, boundary, stop_lo, stop_hi):
        out = []
        cur = z0
        for _ in range(n_probe):
            cur = boundary + (cur - boundary) / 2.0 if np.isfinite(boundary) \
                else cur * 2.0 if boundary > 0 else cur - max(1.0, abs(cur))
            if not stop_lo <= cur <= stop_hi:
                break
            out.append(cur)
        return out

    def decays(ratios):
        rs = [r for r in ratios if np.isfinite(r)]
        if not rs:
            return False
        if rs[-1] < 1e-13 * (1 + rs[0]):
            return True
        qs = [r1 / r0 for r0, r1 in zip(rs, rs[1:]) if r0 > 0]
        tail = qs[-6:]
        return bool(tail) and max(tail) < 1.0 - 1e-5

    ra = [abs(g(x)) / float(pair.phi(x)) for x in probes(lo, a_true, a, b)]
    rb = [abs(g(x)) / float(pair.psi(x)) for x in probes(hi, b_true, a, b)]
    return GrowthResult(decays(ra), decays(rb), ra, rb)


# -- representation and slope identities -----------------------------------------

def representation_check(g: PayoffDC, mu: SignedMeasure,
                         pair: diff.FundamentalPair, grid=None,
                         gki: GreenKernelIntegrals | None = None) -> float:
    """Max relative error of reconstructing g from its operator measure:

        g(x) = -( phi(x) * F_open(x) + psi(x) * R_closed(x) )

    with the green_norm-weighted kernel integrals."""
    gki = gki or GreenKernelIntegrals(mu, pair)
    if grid is None:
        lo, hi = default_window(mu, margin=8.0)
        grid = np.geomspace(lo, hi, 101) if lo > 0 else np.linspace(lo, hi, 101)
        grid = np.sort(np.concatenate([grid, np.asarray(g.breakpoints)]))
    worst = 0.0
    for x in np.asarray(grid, float):
        recon = -(float(pair.phi(x)) * gki.psi_head(x, closed=False)
                  + float(pair.psi(x)) * gki.phi_tail(x, closed=True))
        worst = max(worst, abs(recon - g(x)) / (1.0 + abs(g(x))))
    return worst


@dataclass
class SlopeFunctionals:
    direct: tuple[float, float, float, float]    # (+phi, -phi, +psi, -psi)
    integral: tuple[float, float, float, float]
    max_rel_mismatch: float


def slope_functionals(g, mu, pair, x, gki=None, tol=None) -> SlopeFunctionals:
    """One-sided Wronskian brackets of g against phi and psi, computed both
    directly and through the kernel-integral identities; the two must agree."""
    gki = gki or GreenKernelIntegrals(mu, pair)
    x = float(x)
    phi, dphi = float(pair.phi(x)), float(pair.dphi(x))
    psi, dpsi = float(pair.psi(x)), float(pair.dpsi(x))
    W = phi * dpsi - dphi * psi
    gp, gm, gv = g.derivative(x, "+"), g.derivative(x, "-"), g(x)
    direct = (gp * phi - gv * dphi,
              gm * phi - gv * dphi,
              gp * psi - gv * dpsi,
              gm * psi - gv * dpsi)
    integral = (-W * gki.phi_tail(x, closed=False),
                -W * gki.phi_tail(x, closed=True),
                W * gki.psi_head(x, closed=True),
                W * gki.psi_head(x, closed=False))
    scale = 1.0 + max(abs(v) for v in direct)
    mism = max(abs(d - i) for d, i in zip(direct, integral)) / scale
    if tol is not None and mism > tol:
        raise IdentityMismatch(
            f"slope identities disagree at x={x}: rel mismatch {mism:.3g}")
    return SlopeFunctionals(direct, integral, mism)


def slope_identity_profile(g, mu, pair, xs, gki=None):
    """Max relative direct-vs-integral mismatch over a grid (shared cache)."""
    gki = gki or GreenKernelIntegrals(mu, pair)
    return max(slope_functionals(g, mu, pair, x, gki=gki).max_rel_mismatch
               for x in np.asarray(xs, float))


# -- running payoffs ---------------------------------------------------------------

def running_payoff_to_terminal(H, G: Optional[PayoffDC], spec, pair,
                               h_breaks=(), window=None,
                               n_nodes=1025) -> PayoffDC:
    """Convert a running payoff H (collected until stopping) plus a terminal
    cost G into the equivalent terminal payoff g = -G + h, where h is the
    discounted potential of H:

        h(x) = knorm * ( phi(x) int_{]a,x[} Psi H + psi(x) int_{[x,b[} Phi H ).

    h is C^1 with absolutely continuous derivative even for discontinuous H.
    """
    a, b = spec.interval
    muH = SignedMeasure(density=lambda x: np.asarray(H(x), float), atoms=(),
                        domain=spec.interval, breaks=tuple(h_breaks))
    chk = check_integrability(muH, pair)
    if not chk:
        raise IntegrabilityFailure(f"running payoff not integrable: {chk.note}")
    gki = GreenKernelIntegrals(muH, pair, window=window)
    lo, hi = gki.window
    xs = np.geomspace(lo, hi, n_nodes) if lo > 0 else np.linspace(lo, hi, n_nodes)
    g_breaks = tuple(G.breakpoints) if G is not None else ()
    xs = np.unique(np.concatenate([xs, np.asarray(g_breaks, float),
                                   np.asarray(h_breaks, float)]))
    phi_v = np.asarray(pair.phi(xs), float)
    psi_v = np.asarray(pair.psi(xs), float)
    dphi_v = np.asarray(pair.dphi(xs), float)
    dpsi_v = np.asarray(pair.dpsi(xs), float)
    head = np.array([gki.psi_head(x, closed=False) for x in xs])
    tail = np.array([gki.phi_tail(x, closed=True) for x in xs])
    h = phi_v * head + psi_v * tail
    dh = dphi_v * head + dpsi_v * tail   # boundary terms cancel: phi*Psi == psi*Phi
    h_spline = CubicHermiteSpline(xs, h, dh)
    dh_spline = h_spline.derivative()

    def h_f(x):
        return h_spline(x)

    def h_df(x):
        return dh_spline(x)

    def h_d2f(x):
        # from L_ac h + H = 0: h'' = 2 (r h - b h' - H) / sigma^2
        x = np.asarray(x, float)
        s2 = np.asarray(spec.volatility(x), float) ** 2
        return 2.0 * (np.asarray(spec.discount(x), float) * h_spline(x)
                      - np.asarray(spec.drift(x), float) * dh_spline(x)
                      - np.asarray(H(x), float)) / s2

    breaks = tuple(sorted(set(g_breaks) | set(float(t) for t in h_breaks)))
    pieces = []
    for k in range(len(breaks) + 1):
        if G is None:
            pieces.append(PayoffPiece(h_f, h_df, h_d2f))
        else:
            pieces.append(PayoffPiece(
                f=(lambda q: lambda x: h_f(x) - q._apply(x, "f", "+"))(G),
                df=(lambda q: lambda x: h_df(x) - q._apply(x, "df", "+"))(G),
                d2f=(lambda q: lambda x: h_d2f(x) - q._apply(x, "d2f", "+"))(G)))
    return PayoffDC(breaks, tuple(pieces), spec.interval)


# -- green_norm calibration ---------------------------------------------------------

@lru_cache(maxsize=None)
def calibrate_green_norm(candidates=(1.0, 2.0)):
    """Pick the kernel normalisation that reconstructs g(x) = x exactly under
    a reference geometric Brownian motion.  The representation identity and
    the q-functional weights share one constant; calibration pins it."""
    spec = diff.geometric_bm(0.0, 0.2, 0.01)
    pair = diff.fundamental_solutions(spec)
    g = from_polynomials([], [[0.0, 1.0]], spec.interval)
    mu = lop_measure(g, spec)
    errs = {}
    for k in candidates:
        trial = diff.FundamentalPair(
            phi=pair.phi, dphi=pair.dphi, psi=pair.psi, dpsi=pair.dpsi,
            log_phi=pair.log_phi, log_psi=pair.log_psi, sigma2=pair.sigma2,
            interval=pair.interval, green_norm=float(k), meta=pair.meta)
        errs[k] = representation_check(g, mu, trial,
                                       grid=np.geomspace(0.25, 16.0, 9))
    best = min(errs, key=errs.get)
    if errs[best] > 1e-8:
        raise IdentityMismatch(f"no candidate normalisation reconstructs the "
                               f"payoff: residuals {errs}")
    return float(best)
