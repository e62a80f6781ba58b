"""Quadrature utilities: kink-aware panels, geometric tail integration, and
fast cumulative antiderivatives for repeated interval integrals.

Integrands here are the absolutely continuous parts of operator measures
weighted by Green-kernel densities.  They are smooth between payoff
breakpoints, may have integrable power singularities at a finite boundary,
and may decay slowly (power-law) toward an infinite boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicSpline

from .errors import QuadratureFailure

_QUAD_KW = dict(epsabs=1e-13, epsrel=1e-11, limit=200)

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)


def piecewise_quad(f, lo, hi, breaks=(), **kw):
    """Integrate f over [lo, hi] splitting panels at the interior breaks."""
    if hi <= lo:
        return 0.0 if hi == lo else -piecewise_quad(f, hi, lo, breaks, **kw)
    pts = sorted(b for b in breaks if lo < b < hi)
    edges = [lo] + pts + [hi]
    opts = {**_QUAD_KW, **kw}
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        try:
            val, _ = quad(f, a, b, **opts)
        except Exception as exc:  # pragma: no cover - scipy raises rarely
            raise QuadratureFailure(f"quad failed on [{a}, {b}]: {exc}") from exc
        total += val
    return total


def gauss_panel(f, lo, hi, breaks=()):
    """Fixed-order Gauss-Legendre panels (vectorised f), split at breaks.

    Meant for integrands smooth per panel; pair with geometric blocks so no
    panel straddles a feature or an endpoint singularity."""
    if hi <= lo:
        return 0.0 if hi == lo else -gauss_panel(f, hi, lo, breaks)
    pts = sorted(b for b in breaks if lo < b < hi)
    edges = [lo] + pts + [hi]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        xs = mid + half * _GL_NODES
        total += half * float(np.dot(_GL_WEIGHTS, np.asarray(f(xs), float)))
    return total


@dataclass(frozen=True)
class TailEstimate:
    """Result of a geometric-block tail integration toward a boundary."""

    value: float
    converged: bool
    ratio: float          # extrapolated block-decay ratio (<1 means convergent)
    blocks: int
    tail_bound: float     # bound on the mass beyond the last block
    note: str = ""

    def __bool__(self):
        return self.converged


def tail_integral(f, z0, boundary, breaks=(), *, factor=2.0, rel_tol=1e-12,
                  ratio_margin=2e-4, max_blocks=240, vectorized=True):
    """Integrate f from z0 toward `boundary` (finite, +inf or -inf) by
    geometric blocks, deciding convergence from the block-decay ratio.

    The ratio test resolves near-critical power tails: blocks over a
    geometric partition of a ~s^p integrand decay with constant ratio
    factor^(p+1), so an extrapolated ratio below 1 - ratio_margin certifies
    convergence long before the blocks themselves are negligible.
    Inconclusive tails (ratio within the margin of 1, or unstable) are
    reported as non-converged; callers treat that as rejection.
    """
    rule = gauss_panel if vectorized else piecewise_quad
    edges = _tail_edges(z0, boundary, factor, max_blocks)
    total = 0.0
    mags: list[float] = []
    ratios: list[float] = []
    scale = 0.0
    stable = 0
    for k, (a, b) in enumerate(edges):
        blk = rule(f, min(a, b), max(a, b), breaks)
        total += blk
        mag = abs(blk)
        scale = max(scale, abs(total), mag)
        if scale == 0.0:
            # identically zero so far; a few confirming blocks suffice
            if k >= 4:
                return TailEstimate(0.0, True, 0.0, k + 1, 0.0, "zero tail")
            continue
        if mag <= rel_tol * scale:
            # absolute convergence: remaining mass bounded by a geometric tail
            rho = mags[-1] and mag / mags[-1] or 0.0
            rho = min(rho, 0.9)
            bound = mag * rho / (1.0 - rho) + mag
            return TailEstimate(total, True, rho, k + 1, bound)
        if mags and mags[-1] > 0:
            ratios.append(mag / mags[-1])
        mags.append(mag)
        if len(ratios) >= 3:
            r2, r1, r0 = ratios[-3], ratios[-2], ratios[-1]
            drift = abs(r0 - r1) + abs(r1 - r2)
            if drift <= 0.02 * abs(1.0 - r0) + 1e-5:
                stable += 1
            else:
                stable = 0
            if stable >= 2:
                rho = r0 + (r0 - r1)  # linear extrapolation of the ratio
                if rho <= 1.0 - ratio_margin:
                    bound = mag * rho / (1.0 - rho)
                    if bound <= 1e-9 * scale or k == len(edges) - 1:
                        return TailEstimate(total + _signed_tail(blk, rho), True,
                                            rho, k + 1, bound)
                elif rho >= 1.0 + ratio_margin:
                    return TailEstimate(total, False, rho, k + 1, np.inf,
                                        "diverging blocks")
                else:
                    return TailEstimate(total, False, rho, k + 1, np.inf,
                                        "inconclusive: ratio too close to 1")
    rho = ratios[-1] if ratios else 1.0
    return TailEstimate(total, False, rho, len(edges), np.inf,
                        "inconclusive: block budget exhausted")


def _signed_tail(last_block, rho):
    # geometric extrapolation of the remaining (single-signed) tail
    return last_block * rho / (1.0 - rho)


def _tail_edges(z0, boundary, factor, max_blocks):
    edges = []
    if np.isinf(boundary):
        sgn = 1.0 if boundary > 0 else -1.0
        span = max(1.0, abs(z0))
        cur = z0
        for _ in range(max_blocks):
            nxt = cur + sgn * span
            edges.append((cur, nxt))
            cur = nxt
            span *= factor
    else:
        # approach a finite boundary geometrically: z_k = boundary + (z0-boundary)/factor^k
        cur = z0
        for _ in range(max_blocks):
            nxt = boundary + (cur - boundary) / factor
            edges.append((nxt, cur) if nxt < cur else (cur, nxt))
            cur = nxt
    return edges


class CumulativeIntegral:
    """Cumulative integral x -> int_lo^x f(s) ds with kink-aware panels.

    Each panel between breaks is resampled densely (in log coordinates when
    the panel is positive and spans decades) and replaced by the exact
    antiderivative of a cubic spline, so that interval integrals cost O(1)
    evaluations.  Intended for integrands that are smooth per panel.
    """

    def __init__(self, f, lo, hi, breaks=(), *, nodes_per_panel=1025,
                 nodes_per_decade=700, max_nodes=40001):
        if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
            raise ValueError(f"bad cumulative window [{lo}, {hi}]")
        pts = [lo] + sorted(b for b in breaks if lo < b < hi) + [hi]
        self.lo, self.hi = lo, hi
        self._panels = []
        offset = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            panel = _Panel(f, a, b, nodes_per_panel, nodes_per_decade, max_nodes)
            self._panels.append((a, b, offset, panel))
            offset += panel.total
        self.total = offset
        self._edges = np.array(pts)

    def integral(self, x):
        """Cumulative int_lo^x (absolutely continuous part only)."""
        x = float(x)
        if x <= self.lo:
            return 0.0
        if x >= self.hi:
            return self.total
        k = int(np.searchsorted(self._edges, x, side="right")) - 1
        k = min(max(k, 0), len(self._panels) - 1)
        a, b, offset, panel = self._panels[k]
        return offset + panel.upto(x)

    def between(self, lo, hi):
        if hi < lo:
            return -self.between(hi, lo)
        return self.integral(hi) - self.integral(lo)


class _Panel:
    def __init__(self, f, a, b, nodes_min, nodes_per_decade, max_nodes):
        use_log = a > 0 and b / a > 4.0
        if use_log:
            ta, tb = np.log(a), np.log(b)
            n = int(min(max(nodes_min, nodes_per_decade * (tb - ta) / np.log(10.0)),
                        max_nodes))
            t = np.linspace(ta, tb, n)
            x = np.exp(t)
            y = np.asarray(f(x), float) * x  # d s = e^t d t
            self._t_ofted = True
        else:
            n = int(nodes_min)
            t = np.linspace(a, b, n)
            x = t
            y = np.asarray(f(x), float)
            self._t_ofted = False
        if not np.all(np.isfinite(y)):
            raise QuadratureFailure(
                f"non-finite integrand values in panel [{a}, {b}]")
        self._anti = CubicSpline(t, y).antiderivative()
        self._t0 = t[0]
        self.total = float(self._anti(t[-1]) - self._anti(self._t0))

    def upto(self, x):
        t = np.log(x) if self._t_ofted else x
        return float(self._anti(t) - self._anti(self._t0))
