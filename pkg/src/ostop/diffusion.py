"""One-dimensional Ito diffusions, their validation, and the fundamental
solutions (phi, psi) of the killed-generator ODE

    (1/2) sigma^2(x) f''(x) + b(x) f'(x) - r(x) f(x) = 0

on an open interval ]alpha, beta[.  phi is the positive strictly decreasing
solution, psi the positive strictly increasing one; both are unique up to
multiplicative constants.  Everything downstream works with ratios or with
coefficients against this basis, so both are normalised to 1 at an interior
anchor point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.special import hyp1f1, hyperu, pbdv

from .errors import (DiscountBelowFloor, IntegrabilityProbeDiverged,
                     NoDecayingSolutionFound, NonPositiveVolatility,
                     OdeIntegrationFailed, OutOfInterval)

PRESETS = ("BrownianMotion", "GeometricBM", "OrnsteinUhlenbeck", "CIR", "Custom")

#: Normalisation constant multiplying the Green-kernel densities Phi, Psi in
#: every representation/functional integral.  Frozen from the calibration in
#: payoff.calibrate_green_norm(), which reconstructs power payoffs under
#: geometric Brownian motion and is asserted in the test suite.
GREEN_NORM = 2.0


@dataclass(frozen=True)
class DiffusionSpec:
    """Coefficients of dX = b(X) dt + sigma(X) dW with state discount r(X)."""

    drift: Callable
    volatility: Callable
    discount: Callable
    interval: tuple[float, float]
    preset: str = "Custom"
    params: dict = field(default_factory=dict)
    r_floor: float = 1e-10   # declared lower bound r0 > 0 for the discount

    def __post_init__(self):
        a, b = self.interval
        if not a < b:
            raise ValueError(f"empty interval ]{a}, {b}[")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")

    def contains(self, x):
        a, b = self.interval
        return a < x < b

    def probe_window(self):
        """A compact window well inside the interval, used for validation
        probes and as the default numerical truncation."""
        a, b = self.interval
        lo = a if np.isfinite(a) else None
        hi = b if np.isfinite(b) else None
        if lo is not None and hi is not None:
            span = hi - lo
            return lo + 1e-6 * span, hi - 1e-6 * span
        if self.preset in ("GeometricBM", "CIR") or (lo is not None and lo >= 0):
            base = max(self.params.get("level", 1.0), 1.0)
            return max(lo or 0.0, 1e-5 * base) or 1e-5, 1e5 * base
        level = self.params.get("level", 0.0)
        width = 60.0 * max(self.params.get("volatility", 1.0), 1.0)
        return level - width, level + width


# -- preset constructors -----------------------------------------------------

def geometric_bm(drift=0.0, volatility=0.2, discount=0.01):
    """dX = drift*X dt + volatility*X dW on ]0, inf[, constant discounting."""
    b, s, r = float(drift), float(volatility), float(discount)
    return DiffusionSpec(
        drift=lambda x: b * np.asarray(x, float),
        volatility=lambda x: s * np.asarray(x, float),
        discount=lambda x: np.full_like(np.asarray(x, float), r),
        interval=(0.0, np.inf),
        preset="GeometricBM",
        params={"drift": b, "volatility": s, "discount": r},
        r_floor=r,
    )


def brownian_motion(drift=0.0, volatility=1.0, discount=0.05):
    b, s, r = float(drift), float(volatility), float(discount)
    return DiffusionSpec(
        drift=lambda x: np.full_like(np.asarray(x, float), b),
        volatility=lambda x: np.full_like(np.asarray(x, float), s),
        discount=lambda x: np.full_like(np.asarray(x, float), r),
        interval=(-np.inf, np.inf),
        preset="BrownianMotion",
        params={"drift": b, "volatility": s, "discount": r},
        r_floor=r,
    )


def ornstein_uhlenbeck(rate=1.0, level=0.0, volatility=1.0, discount=0.05):
    """dX = rate*(level - X) dt + volatility dW on the whole line."""
    k, th, s, r = float(rate), float(level), float(volatility), float(discount)
    return DiffusionSpec(
        drift=lambda x: k * (th - np.asarray(x, float)),
        volatility=lambda x: np.full_like(np.asarray(x, float), s),
        discount=lambda x: np.full_like(np.asarray(x, float), r),
        interval=(-np.inf, np.inf),
        preset="OrnsteinUhlenbeck",
        params={"rate": k, "level": th, "volatility": s, "discount": r},
        r_floor=r,
    )


def cir(rate=1.0, level=1.0, volatility=0.5, discount=0.05):
    """dX = rate*(level - X) dt + volatility*sqrt(X) dW on ]0, inf[.

    Requires 2*rate*level > volatility^2 so that 0 is an entrance boundary.
    """
    k, th, s, r = float(rate), float(level), float(volatility), float(discount)
    if 2 * k * th <= s * s:
        raise ValueError("CIR needs 2*rate*level > volatility^2")
    return DiffusionSpec(
        drift=lambda x: k * (th - np.asarray(x, float)),
        volatility=lambda x: s * np.sqrt(np.asarray(x, float)),
        discount=lambda x: np.full_like(np.asarray(x, float), r),
        interval=(0.0, np.inf),
        preset="CIR",
        params={"rate": k, "level": th, "volatility": s, "discount": r},
        r_floor=r,
    )


def custom(drift, volatility, discount, interval, r_floor, params=None):
    return DiffusionSpec(drift=drift, volatility=volatility, discount=discount,
                         interval=tuple(interval), preset="Custom",
                         params=params or {}, r_floor=float(r_floor))


# -- validation ---------------------------------------------------------------

@dataclass
class CheckEntry:
    name: str
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    entries: list[CheckEntry]

    @property
    def passed(self):
        return all(e.passed for e in self.entries)

    def __bool__(self):
        return self.passed

    def summary(self):
        return "\n".join(f"[{'ok' if e.passed else 'FAIL'}] {e.name}: {e.detail}"
                         for e in self.entries)


def validate_diffusion(spec, n_probe=257, raise_on_fail=True):
    """Check the standing assumptions on (b, sigma, r) by probing a compact
    window: positive squared volatility, discount above the declared floor,
    and finiteness of the local integrability integrals of (1+|b|)/sigma^2
    and r/sigma^2.  Non-explosiveness is known for the presets and flagged
    as user-asserted for Custom coefficients."""
    lo, hi = spec.probe_window()
    xs = np.geomspace(lo, hi, n_probe) if lo > 0 else np.linspace(lo, hi, n_probe)
    entries = []

    sig2 = np.asarray(spec.volatility(xs), float) ** 2
    ok = bool(np.all(sig2 > 0) and np.all(np.isfinite(sig2)))
    entries.append(CheckEntry("volatility_positive", ok,
                              f"min sigma^2 = {sig2.min():.3g} on [{lo:.3g}, {hi:.3g}]"))
    if not ok and raise_on_fail:
        raise NonPositiveVolatility(entries[-1].detail)

    r = np.asarray(spec.discount(xs), float)
    ok = bool(spec.r_floor > 0 and np.all(r >= spec.r_floor * (1 - 1e-12)))
    entries.append(CheckEntry("discount_floor", ok,
                              f"min r = {r.min():.3g} vs floor {spec.r_floor:.3g}"))
    if not ok and raise_on_fail:
        raise DiscountBelowFloor(entries[-1].detail)

    sub = np.array_split(np.arange(n_probe), 4)
    worst = 0.0
    ok = True
    for idx in sub:
        a, b = xs[idx[0]], xs[idx[-1]]
        if a == b:
            continue
        try:
            i1, _ = quad(lambda s: (1 + abs(float(spec.drift(s)))) / float(spec.volatility(s)) ** 2,
                         a, b, limit=100)
            i2, _ = quad(lambda s: float(spec.discount(s)) / float(spec.volatility(s)) ** 2,
                         a, b, limit=100)
        except Exception:
            ok = False
            break
        if not (np.isfinite(i1) and np.isfinite(i2)):
            ok = False
            break
        worst = max(worst, i1, i2)
    entries.append(CheckEntry("local_integrability", ok,
                              f"max compact probe integral = {worst:.3g}"))
    if not ok and raise_on_fail:
        raise IntegrabilityProbeDiverged(entries[-1].detail)

    if spec.preset == "Custom":
        entries.append(CheckEntry("non_explosive", True,
                                  "unverified; user-asserted for Custom coefficients"))
    else:
        entries.append(CheckEntry("non_explosive", True,
                                  f"known for preset {spec.preset}"))
    return ValidationReport(entries)


# -- fundamental pair ---------------------------------------------------------

@dataclass(frozen=True)
class FundamentalPair:
    """Evaluators for phi, psi, their derivatives and Green-kernel densities.

    `support` is the trustworthy evaluation range: the whole interval for
    closed forms, the ODE truncation window for numerically built pairs.
    All quadrature and probing downstream stays inside it."""

    phi: Callable
    dphi: Callable
    psi: Callable
    dpsi: Callable
    log_phi: Callable
    log_psi: Callable
    sigma2: Callable
    interval: tuple[float, float]
    green_norm: float = GREEN_NORM
    support: tuple[float, float] | None = None
    meta: dict = field(default_factory=dict)

    def eval_bounds(self):
        return self.support if self.support is not None else self.interval

    def wronskian(self, x):
        return self.phi(x) * self.dpsi(x) - self.dphi(x) * self.psi(x)

    def cap_phi(self, x):
        """Phi(x) = phi(x) / (sigma^2(x) W(x))."""
        return self.phi(x) / (self.sigma2(x) * self.wronskian(x))

    def cap_psi(self, x):
        return self.psi(x) / (self.sigma2(x) * self.wronskian(x))


def fundamental_solutions(spec, window=None, rtol=1e-10):
    """Closed forms for the presets with constant discounting; numerical
    integration of the ODE (decaying branch from each end) for Custom."""
    if spec.preset == "GeometricBM":
        return _gbm_pair(spec)
    if spec.preset == "BrownianMotion":
        return _bm_pair(spec)
    if spec.preset == "OrnsteinUhlenbeck":
        return _ou_pair(spec)
    if spec.preset == "CIR":
        return _cir_pair(spec)
    return _numeric_pair(spec, window or spec.probe_window(), rtol)


def gbm_exponents(drift, volatility, discount):
    """Roots m < 0 < n of (1/2) sigma^2 k(k-1) + b k - r = 0."""
    b, s2, r = drift, volatility ** 2, discount
    half = 0.5 - b / s2
    disc = math.sqrt(half * half + 2.0 * r / s2)
    return half - disc, half + disc


def _gbm_pair(spec):
    p = spec.params
    m, n = gbm_exponents(p["drift"], p["volatility"], p["discount"])
    s = p["volatility"]

    def phi(x):
        return np.asarray(x, float) ** m

    def psi(x):
        return np.asarray(x, float) ** n

    return FundamentalPair(
        phi=phi,
        dphi=lambda x: m * np.asarray(x, float) ** (m - 1),
        psi=psi,
        dpsi=lambda x: n * np.asarray(x, float) ** (n - 1),
        log_phi=lambda x: m * np.log(x),
        log_psi=lambda x: n * np.log(x),
        sigma2=lambda x: (s * np.asarray(x, float)) ** 2,
        interval=spec.interval,
        meta={"kind": "gbm", "m": m, "n": n},
    )


def _bm_pair(spec):
    p = spec.params
    b, s, r = p["drift"], p["volatility"], p["discount"]
    disc = math.sqrt(b * b + 2.0 * r * s * s)
    k_minus = (-b - disc) / (s * s)
    k_plus = (-b + disc) / (s * s)

    return FundamentalPair(
        phi=lambda x: np.exp(k_minus * np.asarray(x, float)),
        dphi=lambda x: k_minus * np.exp(k_minus * np.asarray(x, float)),
        psi=lambda x: np.exp(k_plus * np.asarray(x, float)),
        dpsi=lambda x: k_plus * np.exp(k_plus * np.asarray(x, float)),
        log_phi=lambda x: k_minus * np.asarray(x, float),
        log_psi=lambda x: k_plus * np.asarray(x, float),
        sigma2=lambda x: np.full_like(np.asarray(x, float), s * s),
        interval=spec.interval,
        meta={"kind": "bm", "k_minus": k_minus, "k_plus": k_plus},
    )


def _ou_pair(spec):
    # psi(x) = e^{k z^2/(2 s^2)} D_{-r/k}(-z sqrt(2k)/s),  z = x - level,
    # phi the mirror image; D_v is the parabolic cylinder function.
    p = spec.params
    k, th, s, r = p["rate"], p["level"], p["volatility"], p["discount"]
    nu = -r / k
    c = math.sqrt(2.0 * k) / s

    def _branch(sign):
        def f(x):
            z = np.asarray(x, float) - th
            d, _ = pbdv(nu, sign * c * z)
            return np.exp(k * z * z / (2 * s * s)) * d

        def df(x):
            z = np.asarray(x, float) - th
            d, dp = pbdv(nu, sign * c * z)
            e = np.exp(k * z * z / (2 * s * s))
            return e * (k * z / (s * s) * d + sign * c * dp)

        def logf(x):
            z = np.asarray(x, float) - th
            d, _ = pbdv(nu, sign * c * z)
            return k * z * z / (2 * s * s) + np.log(d)

        return f, df, logf

    psi, dpsi, log_psi = _branch(-1.0)
    phi, dphi, log_phi = _branch(+1.0)
    return FundamentalPair(
        phi=phi, dphi=dphi, psi=psi, dpsi=dpsi,
        log_phi=log_phi, log_psi=log_psi,
        sigma2=lambda x: np.full_like(np.asarray(x, float), s * s),
        interval=spec.interval,
        meta={"kind": "ou"},
    )


def _cir_pair(spec):
    # In z = 2 k x / s^2 the ODE becomes Kummer's equation with a = r/k,
    # b = 2 k level / s^2; psi = M(a,b,z) increasing, phi = U(a,b,z) decreasing.
    p = spec.params
    k, th, s, r = p["rate"], p["level"], p["volatility"], p["discount"]
    a = r / k
    b = 2.0 * k * th / (s * s)
    cz = 2.0 * k / (s * s)

    def psi(x):
        return hyp1f1(a, b, cz * np.asarray(x, float))

    def dpsi(x):
        z = cz * np.asarray(x, float)
        return (a / b) * hyp1f1(a + 1, b + 1, z) * cz

    def phi(x):
        return hyperu(a, b, cz * np.asarray(x, float))

    def dphi(x):
        z = cz * np.asarray(x, float)
        return -a * hyperu(a + 1, b + 1, z) * cz

    return FundamentalPair(
        phi=phi, dphi=dphi, psi=psi, dpsi=dpsi,
        log_phi=lambda x: np.log(phi(x)),
        log_psi=lambda x: np.log(psi(x)),
        sigma2=lambda x: s * s * np.asarray(x, float),
        interval=spec.interval,
        meta={"kind": "cir", "entrance_at_zero": True},
    )


# -- numerical fundamental solutions ------------------------------------------

def _numeric_pair(spec, window, rtol):
    lo, hi = window
    a, b = spec.interval
    if not (a < lo < hi < b):
        raise ValueError("numeric window must be strictly inside the interval")

    def rhs(x, y):
        f, fp = y
        s2 = float(spec.volatility(x)) ** 2
        return [fp, 2.0 * (float(spec.discount(x)) * f - float(spec.drift(x)) * fp) / s2]

    # psi: start at the left truncation with f=0 (kills the phi component),
    # integrate rightward; the unwanted branch decays relative to psi.
    xs_psi, lnf_psi, u_psi = _integrate_branch(rhs, lo, hi, fp0=+1.0, rtol=rtol)
    # phi: mirror image from the right truncation, integrating leftward.
    xs_phi, lnf_phi, u_phi = _integrate_branch(rhs, hi, lo, fp0=-1.0, rtol=rtol)

    anchor = math.sqrt(lo * hi) if lo > 0 else 0.5 * (lo + hi)
    spl_psi = CubicHermiteSpline(xs_psi, lnf_psi, u_psi)
    spl_phi = CubicHermiteSpline(xs_phi, lnf_phi, u_phi)
    off_psi = float(spl_psi(anchor))
    off_phi = float(spl_phi(anchor))
    du_psi = spl_psi.derivative()
    du_phi = spl_phi.derivative()

    # branch-quality probes: psi increasing, phi decreasing, Wronskian positive
    probes = np.geomspace(xs_psi[2], xs_psi[-3], 101) if lo > 0 else \
        np.linspace(xs_psi[2], xs_psi[-3], 101)
    if np.any(du_psi(probes) <= 0) or np.any(du_phi(probes) >= 0):
        raise NoDecayingSolutionFound(
            "could not separate the increasing/decreasing branches on the window")

    def log_psi(x):
        return spl_psi(x) - off_psi

    def log_phi(x):
        return spl_phi(x) - off_phi

    def psi(x):
        return np.exp(log_psi(x))

    def phi(x):
        return np.exp(log_phi(x))

    return FundamentalPair(
        phi=phi,
        dphi=lambda x: phi(x) * du_phi(x),
        psi=psi,
        dpsi=lambda x: psi(x) * du_psi(x),
        log_phi=log_phi,
        log_psi=log_psi,
        sigma2=lambda x: np.asarray(spec.volatility(x), float) ** 2,
        interval=spec.interval,
        support=(float(max(xs_psi[1], xs_phi[1])),
                 float(min(xs_psi[-2], xs_phi[-2]))),
        meta={"kind": "numeric", "window": (lo, hi), "anchor": anchor},
    )


def _integrate_branch(rhs, x0, x1, fp0, rtol, n_segments=64, samples_per_seg=12):
    """Integrate the ODE from x0 to x1 starting at (f, f') = (0, fp0),
    renormalising segment by segment so the state never overflows.
    Returns increasing node arrays of (x, log f, f'/f)."""
    positive = min(x0, x1) > 0
    if positive:
        seg = np.geomspace(x0, x1, n_segments + 1) if x1 > x0 else \
            np.geomspace(x0, x1, n_segments + 1)
    else:
        seg = np.linspace(x0, x1, n_segments + 1)
    state = np.array([0.0, fp0])
    ln_scale = 0.0
    xs, lnf, u = [], [], []
    char = abs(x1 - x0)
    for s0, s1 in zip(seg[:-1], seg[1:]):
        sol = solve_ivp(rhs, (s0, s1), state, method="RK45",
                        rtol=rtol, atol=1e-14, dense_output=True)
        if not sol.success:
            raise OdeIntegrationFailed(f"ODE integration failed on [{s0}, {s1}]: "
                                       f"{sol.message}")
        ts = np.linspace(s0, s1, samples_per_seg + 1)[1:]
        fs, fps = sol.sol(ts)
        good = fs > 0
        xs.extend(ts[good])
        lnf.extend(np.log(fs[good]) + ln_scale)
        u.extend(fps[good] / fs[good])
        state = sol.y[:, -1]
        scale = max(abs(state[0]), abs(state[1]) * char / n_segments, 1e-300)
        ln_scale += math.log(scale)
        state = state / scale
    xs = np.asarray(xs)
    order = np.argsort(xs)
    return xs[order], np.asarray(lnf)[order], np.asarray(u)[order]


# -- hitting-time discount factors --------------------------------------------

def hitting_factor(pair, x, z):
    """Expected discount factor at the first hitting time of z from x:
    psi(x)/psi(z) below, phi(x)/phi(z) above, 1 at z itself."""
    a, b = pair.interval
    for v in (x, z):
        if not a < v < b:
            raise OutOfInterval(f"{v} outside ]{a}, {b}[")
    if x == z:
        return 1.0
    if x < z:
        return float(np.exp(pair.log_psi(x) - pair.log_psi(z)))
    return float(np.exp(pair.log_phi(x) - pair.log_phi(z)))
