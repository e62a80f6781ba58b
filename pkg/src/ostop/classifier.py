"""Sign structure of the operator measure, maximal turning points of g/psi
and g/phi, and assignment of one of the six structural cases.

Case semantics (by the sign of L g and the turning-point evidence):

    I    L g >= 0 with positive mass        -> never stop, v = 0
    II   L g <= 0 with negative mass        -> stop everywhere, v = g
    III  single upper stopping boundary     (call type; global max of g/psi)
    IV   single lower stopping boundary     (put type; global max of g/phi)
    V    stop in a middle band              (butterfly; both global maxima)
    VI   continue in a middle band          (straddle; two free boundaries)

Case VI may hold without stationary points of the ratios; the label
VI-inferred records that the evidence is the boundary-limit dominance of
the ratios rather than stationarity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .diffusion import FundamentalPair
from .errors import MoreThanTwoSignChanges, MultipleCrossings, Unclassifiable
from .payoff import GreenKernelIntegrals, PayoffDC, SignedMeasure


class Case(str, enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"
    VI = "VI"
    VI_INFERRED = "VI-inferred"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class SignPattern:
    sign_intervals: tuple[tuple[float, float, int], ...]  # (lo, hi, sign)
    atom_signs: tuple[tuple[float, int], ...]
    x_l: Optional[float]
    x_r: Optional[float]
    reduced: str            # e.g. "-+-": zeros dropped, runs merged

    @property
    def has_positive(self):
        return "+" in self.reduced

    @property
    def has_negative(self):
        return "-" in self.reduced


def sign_partition(mu: SignedMeasure, window=None, n_scan=2048) -> SignPattern:
    """Root-bracketed sign intervals of the density plus atom signs.

    The sign sequence is reduced by dropping zero stretches and merging
    equal neighbours; more than three alternations is outside the supported
    case taxonomy and raises."""
    gki_window = window
    if gki_window is None:
        from .payoff import default_window
        gki_window = default_window(mu)
    lo, hi = gki_window
    edges = [lo] + sorted(b for b in mu.breaks if lo < b < hi) + [hi]
    dens_scale = 0.0
    per_piece = []
    for a, b in zip(edges[:-1], edges[1:]):
        n = max(32, int(n_scan * 1.0 / max(1, len(edges) - 1)))
        xs = np.geomspace(a, b, n) if a > 0 else np.linspace(a, b, n)
        xs[0], xs[-1] = a + (b - a) * 1e-12, b - (b - a) * 1e-12
        vals = np.asarray(mu.density(xs), float)
        per_piece.append((xs, vals))
        dens_scale = max(dens_scale, float(np.max(np.abs(vals))))
    atol = 1e-12 * (dens_scale + 1e-300)

    intervals = []  # (lo, hi, sign)
    for xs, vals in per_piece:
        signs = np.where(vals > atol, 1, np.where(vals < -atol, -1, 0))
        start = xs[0]
        cur = signs[0]
        for i in range(1, len(xs)):
            if signs[i] != cur:
                if cur != 0 and signs[i] != 0:
                    cut = brentq(lambda t: float(mu.density(t)), xs[i - 1], xs[i],
                                 xtol=1e-13, rtol=1e-12)
                else:
                    cut = 0.5 * (xs[i - 1] + xs[i])
                intervals.append((start, cut, int(cur)))
                start, cur = cut, signs[i]
        intervals.append((start, xs[-1], int(cur)))
    # merge equal-signed neighbours
    merged = []
    for seg in intervals:
        if merged and merged[-1][2] == seg[2] and abs(merged[-1][1] - seg[0]) < 1e-9 * (1 + abs(seg[0])):
            merged[-1] = (merged[-1][0], seg[1], seg[2])
        else:
            merged.append(list(seg))
    merged = [tuple(s) for s in merged]

    atom_signs = tuple((y, 1 if w > 0 else -1) for y, w in mu.atoms if w != 0)

    # split density segments at atom locations so atoms separate runs
    atom_locs = sorted(y for y, _ in atom_signs)
    split = []
    for lo_s, hi_s, sgn in merged:
        cuts = [y for y in atom_locs if lo_s < y < hi_s]
        last = lo_s
        for y in cuts:
            split.append((last, y, sgn))
            last = y
        split.append((last, hi_s, sgn))

    # build the reduced token sequence in spatial order
    events = [(s[0], s[1], s[2], "seg") for s in split if s[2] != 0]
    events += [(y, y, s, "atom") for y, s in atom_signs]
    events.sort(key=lambda e: (e[0], e[1]))
    tokens = []       # (sign, lo, hi)
    for lo_e, hi_e, sgn, _kind in events:
        if tokens and tokens[-1][0] == sgn:
            tokens[-1] = (sgn, tokens[-1][1], hi_e)
        else:
            tokens.append((sgn, lo_e, hi_e))
    reduced = "".join("+" if s > 0 else "-" for s, _, _ in tokens)
    if len(tokens) > 3:
        raise MoreThanTwoSignChanges(
            f"operator-measure sign sequence {reduced} has more than two "
            "changes; outside the supported cases")

    x_l = x_r = None
    if len(tokens) == 3:
        x_l, x_r = tokens[1][1], tokens[1][2]
    elif len(tokens) == 2:
        # single change: the boundary between the two runs
        x_l = x_r = tokens[0][2] if tokens[0][2] == tokens[1][1] else tokens[1][1]
    return SignPattern(tuple(merged), atom_signs, x_l, x_r, reduced)


@dataclass(frozen=True)
class TurningPoint:
    location: float
    ratio: float            # g/psi (or g/phi) at the turning point
    global_max: bool
    at_atom: bool = False
    via: str = "integral"   # "integral" | "ratio" (staircase route)


@dataclass(frozen=True)
class TurningPoints:
    x_psi: Optional[TurningPoint]
    x_phi: Optional[TurningPoint]


def _crossings(values, xs, fun, direction, tol, atom_locs=()):
    """Refined zero crossings of a continuous profile sampled on xs.
    Brackets containing an atom (where the profile jumps) are skipped; the
    atom-straddle branch owns those."""
    out = []
    for i in range(len(xs) - 1):
        if any(xs[i] <= y <= xs[i + 1] for y in atom_locs):
            continue
        v0, v1 = values[i], values[i + 1]
        if direction == "down" and v0 > tol and v1 < -tol:
            out.append(brentq(fun, xs[i], xs[i + 1], xtol=1e-13, rtol=1e-12))
        if direction == "up" and v0 < -tol and v1 > tol:
            out.append(brentq(fun, xs[i], xs[i + 1], xtol=1e-13, rtol=1e-12))
    return out


def _ratio_sweep(g, fun_log, xs):
    vals = np.asarray(g(xs), float)
    with np.errstate(over="ignore"):
        den = np.exp(np.asarray(fun_log(xs), float))
    return vals / den


def _boundary_ratio_probe(g, fun_log, z0, boundary, stop=None, n=40):
    """Ratio g/f probed along a geometric approach to the boundary; returns
    the supremum observed (may be -inf for negative payoffs).  `stop`
    bounds the march inside the pair's evaluation support."""
    best = -np.inf
    cur = z0
    lo_stop, hi_stop = stop if stop is not None else (-np.inf, np.inf)
    for _ in range(n):
        cur = boundary + (cur - boundary) / 2.0 if np.isfinite(boundary) else \
            (cur * 2.0 if boundary > 0 else cur - max(1.0, abs(cur)))
        if not lo_stop <= cur <= hi_stop:
            break
        val = float(g(cur)) / float(np.exp(fun_log(cur)))
        best = max(best, val)
    return best


def turning_point_psi(g: PayoffDC, mu: Optional[SignedMeasure],
                      pair: FundamentalPair, gki=None, n_scan=2048,
                      window=None) -> Optional[TurningPoint]:
    """Unique maximal turning point of g/psi: the downcross of the running
    integral F(x) = int_{]alpha,x]} Psi dLg, or the straddle condition
    F_closed <= 0 <= F_open at an atom.  Staircase payoffs (no measure) use
    the direct ratio sequence at the jump points instead."""
    if mu is None or g.staircase:
        return _ratio_turning_point(g, pair, which="psi")
    gki = gki or GreenKernelIntegrals(mu, pair, window=window)
    lo, hi = gki.window
    for _ in range(4):
        xs = _scan_grid(lo, hi, mu, n_scan)
        F = np.array([gki.psi_head(x, closed=True) for x in xs])
        scale = float(np.max(np.abs(F))) + 1e-300
        tol = 1e-11 * scale
        if F[-1] > tol:   # no downcross inside the window yet: widen
            gki = gki.widened()
            lo, hi = gki.window
            continue
        break
    atom_locs = [y for y, _ in mu.atoms]
    down = _crossings(F, xs, lambda t: gki.psi_head(t, closed=True), "down",
                      tol, atom_locs)
    candidates = [(x, False) for x in down]
    for y, w in mu.atoms:
        f_open = gki.psi_head(y, closed=False)
        f_closed = gki.psi_head(y, closed=True)
        if f_open >= tol and f_closed <= -tol:      # strict straddle only
            candidates.append((y, True))
    if not candidates:
        return None
    if len(candidates) > 1:
        raise MultipleCrossings(
            f"g/psi has several maximal turning points: {candidates}")
    x_star, at_atom = candidates[0]
    ratio = float(g(x_star)) / float(np.exp(pair.log_psi(x_star)))
    global_max = _is_global_max(g, pair.log_psi, pair.eval_bounds(),
                                (lo, hi), x_star, ratio)
    return TurningPoint(x_star, ratio, global_max, at_atom)


def turning_point_phi(g: PayoffDC, mu: Optional[SignedMeasure],
                      pair: FundamentalPair, gki=None, n_scan=2048,
                      window=None) -> Optional[TurningPoint]:
    """Mirror image of turning_point_psi with the right-tail Phi integral
    R(x) = int_{[x,beta[} Phi dLg; the maximal turning point of g/phi is
    the upcross of R."""
    if mu is None or g.staircase:
        return _ratio_turning_point(g, pair, which="phi")
    gki = gki or GreenKernelIntegrals(mu, pair, window=window)
    lo, hi = gki.window
    for _ in range(4):
        xs = _scan_grid(lo, hi, mu, n_scan)
        R = np.array([gki.phi_tail(x, closed=True) for x in xs])
        scale = float(np.max(np.abs(R))) + 1e-300
        tol = 1e-11 * scale
        if R[0] > tol:    # still positive at the window edge: widen toward alpha
            gki = gki.widened()
            lo, hi = gki.window
            continue
        break
    atom_locs = [y for y, _ in mu.atoms]
    up = _crossings(R, xs, lambda t: gki.phi_tail(t, closed=True), "up",
                    tol, atom_locs)
    candidates = [(x, False) for x in up]
    for y, w in mu.atoms:
        r_open = gki.phi_tail(y, closed=False)
        r_closed = gki.phi_tail(y, closed=True)
        # subgradient straddle: g/phi rises into the atom and falls after,
        # i.e. closed tail <= 0 <= open tail (strict beyond tolerance)
        if r_closed <= -tol and r_open >= tol:
            candidates.append((y, True))
    if not candidates:
        return None
    if len(candidates) > 1:
        raise MultipleCrossings(
            f"g/phi has several maximal turning points: {candidates}")
    x_star, at_atom = candidates[0]
    ratio = float(g(x_star)) / float(np.exp(pair.log_phi(x_star)))
    global_max = _is_global_max(g, pair.log_phi, pair.eval_bounds(),
                                (lo, hi), x_star, ratio)
    return TurningPoint(x_star, ratio, global_max, at_atom)


def _scan_grid(lo, hi, mu, n_scan):
    xs = np.geomspace(lo, hi, n_scan) if lo > 0 else np.linspace(lo, hi, n_scan)
    extra = [b for b in mu.breaks if lo < b < hi]
    extra += [y * (1 - 1e-9) for y, _ in mu.atoms] + \
             [y * (1 + 1e-9) for y, _ in mu.atoms]
    return np.unique(np.concatenate([xs, np.asarray(extra, float)]))


def _is_global_max(g, fun_log, bounds, window, x_star, ratio):
    lo, hi = window
    xs = np.geomspace(lo, hi, 801) if lo > 0 else np.linspace(lo, hi, 801)
    sweep = _ratio_sweep(g, fun_log, xs)
    tol = 1e-9 * (1.0 + abs(ratio))
    if np.nanmax(sweep) > ratio + tol:
        return False
    a, b = g.domain
    lim_a = _boundary_ratio_probe(g, fun_log, lo, a, stop=bounds)
    lim_b = _boundary_ratio_probe(g, fun_log, hi, b, stop=bounds)
    return lim_a <= ratio + tol and lim_b <= ratio + tol


def _ratio_turning_point(g, pair, which):
    """Staircase route: maximal turning points of g/psi (resp. g/phi) sit at
    jump points; take the argmax of the ratio there (first index on ties)."""
    if not g.breakpoints:
        return None
    ys = np.asarray(g.breakpoints, float)
    logf = pair.log_psi if which == "psi" else pair.log_phi
    ratios = [float(g(y)) / float(np.exp(logf(y))) for y in ys]
    k = int(np.argmax(ratios))
    best = ratios[k]
    lo = min(ys) / 16 if min(ys) > 0 else min(ys) - 8.0
    hi = max(ys) * 16
    glob = _is_global_max(g, logf, pair.eval_bounds(), (lo, hi),
                          float(ys[k]), best)
    return TurningPoint(float(ys[k]), best, glob, at_atom=True, via="ratio")


@dataclass(frozen=True)
class Classification:
    case: Case
    evidence: dict = field(default_factory=dict)


def classify(pattern: SignPattern, tp: TurningPoints, g: PayoffDC,
             pair: FundamentalPair) -> Classification:
    """Assign one of the six cases from the sign pattern and the turning
    points.  Ordering decides butterflies versus straddles: global maxima of
    both ratios with x_psi <= x_phi is Case V; a negative/positive/negative
    pattern with boundary-dominant ratios is Case VI, labelled VI-inferred
    when a ratio has no stationary point."""
    ev = {"pattern": pattern.reduced,
          "x_psi": tp.x_psi.location if tp.x_psi else None,
          "x_phi": tp.x_phi.location if tp.x_phi else None}

    if pattern.has_positive and not pattern.has_negative:
        return Classification(Case.I, ev)
    if pattern.has_negative and not pattern.has_positive:
        return Classification(Case.II, ev)

    psi_g = tp.x_psi is not None and tp.x_psi.global_max
    phi_g = tp.x_phi is not None and tp.x_phi.global_max

    if psi_g and phi_g:
        if tp.x_psi.location <= tp.x_phi.location:
            return Classification(Case.V, ev)
        raise Unclassifiable(f"two global maxima in straddle order: {ev}")
    if psi_g:
        return Classification(Case.III, ev)
    if phi_g:
        return Classification(Case.IV, ev)

    if pattern.reduced == "-+-":
        # straddle shape: require the boundary limits to dominate the ratios
        lo, hi = pattern.x_l, pattern.x_r
        win = (min(lo / 8, lo) if lo > 0 else lo - 8.0, hi * 8)
        xs = np.geomspace(max(win[0], 1e-12), win[1], 401) if win[0] > 0 \
            else np.linspace(win[0], win[1], 401)
        bounds = pair.eval_bounds()
        a, b = g.domain
        max_psi = float(np.nanmax(_ratio_sweep(g, pair.log_psi, xs)))
        max_phi = float(np.nanmax(_ratio_sweep(g, pair.log_phi, xs)))
        lim_psi_a = _boundary_ratio_probe(g, pair.log_psi, xs[0], a,
                                          stop=bounds)
        lim_phi_b = _boundary_ratio_probe(g, pair.log_phi, xs[-1], b,
                                          stop=bounds)
        tolp = 1e-9 * (1 + abs(max_psi))
        tolf = 1e-9 * (1 + abs(max_phi))
        ev.update({"limit_ratio_psi_alpha": lim_psi_a, "max_ratio_psi": max_psi,
                   "limit_ratio_phi_beta": lim_phi_b, "max_ratio_phi": max_phi})
        if lim_psi_a >= max_psi - tolp and lim_phi_b >= max_phi - tolf:
            stationary_both = tp.x_psi is not None and tp.x_phi is not None \
                and tp.x_phi.location <= tp.x_psi.location
            case = Case.VI if stationary_both else Case.VI_INFERRED
            return Classification(case, ev)
        raise Unclassifiable(
            f"straddle pattern without boundary ratio dominance: {ev}")

    raise Unclassifiable(f"inconsistent classification evidence: {ev}")
