"""Command-line front end: problem ingestion from TOML files, the
validate -> measure -> classify -> solve -> verify pipeline, and report,
CSV and plot emission.

Exit codes: 0 solved and verified, 1 parse error, 2 solved with
verification warnings, 3 well-posedness rejection, 4 unclassifiable or
no-crossing.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:          # Python 3.10
    import tomli as tomllib

from . import diffusion as diff
from . import payoff as pf
from . import verify as ver
from .errors import ParseError, SolverError
from .pipeline import SolverOptions, solve_stopping_problem

SCHEMA_VERSION = 1


# -- problem-file parsing ------------------------------------------------------

def _interval(raw):
    def conv(v):
        if isinstance(v, str):
            s = v.strip().lower()
            if s in ("inf", "+inf", "infinity"):
                return np.inf
            if s == "-inf":
                return -np.inf
            raise ParseError(f"bad interval endpoint {v!r}")
        return float(v)
    if not (isinstance(raw, (list, tuple)) and len(raw) == 2):
        raise ParseError(f"interval must be a two-element list, got {raw!r}")
    return conv(raw[0]), conv(raw[1])


def _poly_table(entries, interval):
    """Piecewise-polynomial coefficient table -> vectorised callable."""
    segs = [( _interval(e["interval"]), [float(c) for c in e["poly"]])
            for e in entries]

    def f(x):
        x = np.asarray(x, float)
        out = np.full(x.shape if x.ndim else (1,), np.nan)
        xf = np.atleast_1d(x)
        for (lo, hi), coeffs in segs:
            m = (xf >= lo) & (xf <= hi)
            if m.any():
                out[m] = np.polynomial.polynomial.polyval(xf[m], coeffs)
        if np.any(np.isnan(out)):
            raise ParseError("coefficient table does not cover the domain")
        return out if x.ndim else float(out[0])

    return f


def parse_diffusion(block):
    preset = str(block.get("preset", "custom")).lower()
    try:
        if preset in ("gbm", "geometricbm", "geometric_bm"):
            return diff.geometric_bm(block.get("drift", 0.0),
                                     block.get("volatility", 0.2),
                                     block.get("discount", 0.01))
        if preset in ("bm", "brownianmotion", "brownian_motion"):
            return diff.brownian_motion(block.get("drift", 0.0),
                                        block.get("volatility", 1.0),
                                        block.get("discount", 0.05))
        if preset in ("ou", "ornsteinuhlenbeck", "ornstein_uhlenbeck"):
            return diff.ornstein_uhlenbeck(block.get("rate", 1.0),
                                           block.get("level", 0.0),
                                           block.get("volatility", 1.0),
                                           block.get("discount", 0.05))
        if preset == "cir":
            return diff.cir(block.get("rate", 1.0), block.get("level", 1.0),
                            block.get("volatility", 0.5),
                            block.get("discount", 0.05))
        if preset == "custom":
            interval = _interval(block["interval"])
            return diff.custom(
                drift=_poly_table(block["drift"], interval),
                volatility=_poly_table(block["volatility"], interval),
                discount=_poly_table(block["discount"], interval),
                interval=interval,
                r_floor=float(block["discount_floor"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad diffusion block: {exc}") from exc
    raise ParseError(f"unknown diffusion preset {preset!r}")


_NAMED_PAYOFFS = {
    "kinked_linear": lambda p, dom: pf.kinked_linear(
        float(p["c"]), float(p.get("kink", 2.0)), dom),
    "power": lambda p, dom: pf.from_polynomials(
        [], [[0.0] * int(p.get("exponent", 1)) + [1.0]], dom)
    if float(p.get("exponent", 1)).is_integer()
    else _power_payoff(float(p["exponent"]), dom),
}


def _power_payoff(j, dom):
    f = lambda x: np.asarray(x, float) ** j
    df = lambda x: j * np.asarray(x, float) ** (j - 1)
    d2f = lambda x: j * (j - 1) * np.asarray(x, float) ** (j - 2)
    return pf.from_callables([], [f], [df], [d2f], dom)


def parse_payoff(block, spec, params=None):
    dom = spec.interval
    params = dict(block.get("params", {}), **(params or {}))
    try:
        if "kind" in block:
            kind = block["kind"]
            if kind == "staircase":
                return pf.staircase([float(t) for t in params["jumps"]],
                                    [float(v) for v in params["levels"]], dom)
            if kind in _NAMED_PAYOFFS:
                return _NAMED_PAYOFFS[kind](params, dom)
            raise ParseError(f"unknown payoff kind {kind!r}")
        pieces = block["pieces"]
        staircase_mode = bool(block.get("staircase", False))
        breaks, coeffs = [], []
        prev_hi = None
        for e in pieces:
            lo, hi = _interval(e["interval"])
            if prev_hi is not None:
                if lo != prev_hi:
                    raise ParseError("payoff pieces must tile the domain")
                breaks.append(lo)
            prev_hi = hi
            coeffs.append([float(c) for c in e["poly"]])
        return pf.from_polynomials(breaks, coeffs, dom,
                                   staircase=staircase_mode)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad payoff block: {exc}") from exc


def parse_problem(path, seed_override=None, param_override=None):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed problem file {path}: {exc}") from exc
    if "diffusion" not in raw or "payoff" not in raw:
        raise ParseError("problem file needs [diffusion] and [payoff] blocks")
    spec = parse_diffusion(raw["diffusion"])
    g = parse_payoff(raw["payoff"], spec, params=param_override)

    vb = raw.get("verify", {})
    sim = ver.SimConfig(
        scheme=vb.get("scheme", "exact_gbm" if spec.preset == "GeometricBM"
                      else "euler"),
        dt=float(vb.get("dt", 0.02)),
        horizon=float(vb.get("horizon", 1500.0)),
        paths=int(vb.get("paths", 20000)),
        seed=int(seed_override if seed_override is not None
                 else vb.get("seed", 0)),
        antithetic=bool(vb.get("antithetic", False)),
    )
    sb = raw.get("solver", {})
    opts = SolverOptions(
        scan_points=int(sb.get("scan_points", 2048)),
        verify_level=vb.get("level", "fast"),
        sim=sim,
        psor=ver.GridSpec(*vb["psor_grid"]) if "psor_grid" in vb else None,
        mc_x0=vb.get("x0"),
    )
    output = raw.get("output", {})
    return spec, g, opts, output, raw


# -- artifact emission -----------------------------------------------------------

def _fmt(x):
    return None if x is None else float(x)


def outcome_report(outcome, seed, problem_path):
    sol = outcome.solution
    rep = {
        "schema_version": SCHEMA_VERSION,
        "problem": str(problem_path),
        "status": outcome.status,
        "exit_code": outcome.exit_code,
        "case": str(outcome.case) if outcome.case else None,
        "seed": seed,
        "runtime_seconds": round(outcome.runtime, 6),
        "messages": outcome.messages,
    }
    if sol is not None:
        rep["boundaries"] = [_fmt(b) for b in sol.boundaries]
        rep["components"] = [
            {"lo": _fmt(c.lo), "hi": _fmt(c.hi), "A": c.A, "B": c.B}
            for c in sol.components]
        rep["stopping_region"] = [[_fmt(lo), _fmt(hi)]
                                  for lo, hi in sol.partition.stopping]
        rep["diagnostics"] = {k: (float(v) if isinstance(v, (int, float, np.floating))
                                  else v)
                              for k, v in sol.diagnostics.items()}
    if outcome.verification is not None:
        rep["verification"] = {k: {"passed": bool(ok), "detail": d}
                               for k, (ok, d) in outcome.verification.entries.items()}
        rep["verified"] = bool(outcome.verification.passed)
    if outcome.smooth_fit is not None:
        rep["smooth_fit"] = [
            {"location": b.location, "smooth": b.smooth,
             "v_minus_left_slope": _fmt(b.v_minus_left_slope)
             if np.isfinite(b.v_minus_left_slope) else None,
             "right_slope_minus_v": _fmt(b.right_slope_minus_v)}
            for b in outcome.smooth_fit]
    if outcome.integrability is not None:
        rep["integrability"] = {"passed": bool(outcome.integrability),
                                "note": outcome.integrability.note}
    if outcome.growth is not None:
        rep["growth_limits"] = {"passed": bool(outcome.growth)}
    if outcome.mc is not None:
        rep["monte_carlo"] = [
            {"label": r.label, "mean": r.estimate.mean,
             "std_error": r.estimate.std_error,
             "delta_mean": r.delta_mean, "delta_std_error": r.delta_std_error}
            for r in outcome.mc]
    return rep


def write_value_csv(path, outcome, n=600):
    vf = outcome.value_function
    g = vf.payoff
    from .value import verification_grid
    xs = verification_grid(vf, None, n=n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "payoff", "value", "region"])
        tags = vf.partition.tag(xs)
        vs = vf(xs)
        gs = g(xs)
        for x, gv, vv, tag in zip(xs, gs, vs, tags):
            w.writerow([f"{x:.17g}", f"{gv:.17g}", f"{vv:.17g}", tag])


def write_plot(path, outcome):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    vf = outcome.value_function
    from .value import verification_grid
    xs = verification_grid(vf, None, n=800)
    fig, ax = plt.subplots(figsize=(8, 5))
    ax.plot(xs, vf.payoff(xs), label="payoff g", lw=1.2, color="tab:gray")
    ax.plot(xs, vf(xs), label="value v", lw=1.6, color="tab:blue")
    for bpt, _ in vf.partition.boundary_points():
        ax.axvline(bpt, color="tab:red", ls="--", lw=0.9)
    ax.set_xlabel("state")
    ax.set_ylabel("value")
    ax.set_xscale("log" if vf.payoff.domain[0] >= 0 else "linear")
    ax.legend()
    ax.set_title(f"case {outcome.case}")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# -- commands ---------------------------------------------------------------------

def run(problem_path, out_dir=None, verify_level=None, seed=None, plot=False):
    try:
        spec, g, opts, output, _raw = parse_problem(problem_path,
                                                    seed_override=seed)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    if verify_level:
        opts.verify_level = verify_level
    try:
        outcome = solve_stopping_problem(spec, g, opts)
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 4
    out_dir = Path(out_dir or output.get("dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    rep = outcome_report(outcome, opts.sim.seed, problem_path)
    (out_dir / "report.json").write_text(json.dumps(rep, indent=2,
                                                    sort_keys=True))
    if outcome.value_function is not None:
        write_value_csv(out_dir / "value_function.csv", outcome)
        if plot or output.get("plot", False):
            write_plot(out_dir / "value_function.svg", outcome)
    if outcome.mc is not None:
        with open(out_dir / "monte_carlo.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["strategy", "lower", "upper", "mean", "std_error",
                        "delta_mean", "delta_std_error", "paths", "seed"])
            for r in outcome.mc:
                w.writerow([r.label, r.lower, r.upper,
                            f"{r.estimate.mean:.17g}",
                            f"{r.estimate.std_error:.17g}",
                            f"{r.delta_mean:.17g}",
                            f"{r.delta_std_error:.17g}",
                            r.estimate.paths_used, opts.sim.seed])
    if outcome.psor is not None:
        with open(out_dir / "psor_grid.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "payoff", "value"])
            for x, gv, vv in zip(outcome.psor.x, outcome.psor.g,
                                 outcome.psor.v):
                w.writerow([f"{x:.17g}", f"{gv:.17g}", f"{vv:.17g}"])
    _print_summary(outcome, rep)
    return outcome.exit_code


def _print_summary(outcome, rep):
    print(f"status: {outcome.status} (case {rep.get('case')})")
    for m in outcome.messages:
        print(f"  note: {m}")
    if "boundaries" in rep:
        print(f"  boundaries: {['%.6g' % b for b in rep['boundaries']]}")
        for c in rep["components"]:
            print(f"  component ]{c['lo']:.6g}, {c['hi']:.6g}[: "
                  f"A = {c['A']:.6g}, B = {c['B']:.6g}")
    if "verification" in rep:
        bad = [k for k, v in rep["verification"].items() if not v["passed"]]
        print(f"  verification: {'all passed' if not bad else 'FAILED ' + str(bad)}")


def sweep(problem_path, param, start, stop, step, out_dir=None, seed=None):
    try:
        spec, _g, opts, output, raw = parse_problem(problem_path,
                                                    seed_override=seed)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return 1
    out_dir = Path(out_dir or output.get("dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    values = np.arange(start, stop + 0.5 * step, step) if step > 0 else []
    rows = []
    for v in values:
        try:
            g = parse_payoff(raw["payoff"], spec, params={param: float(v)})
            outcome = solve_stopping_problem(spec, g, opts)
            sol = outcome.solution
            bdry = sol.boundaries if sol else []
            comp = sol.components[0] if sol and sol.components else None
            rows.append([f"{v:.17g}", str(outcome.case),
                         f"{bdry[0]:.17g}" if bdry else "",
                         f"{bdry[-1]:.17g}" if len(bdry) > 1 else "",
                         f"{comp.A:.17g}" if comp else "",
                         f"{comp.B:.17g}" if comp else "", ""])
        except SolverError as exc:
            rows.append([f"{v:.17g}", "", "", "", "", "", f"error: {exc}"])
    path = out_dir / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([param, "case", "a", "b", "A", "B", "error"])
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows)")
    return 0


def main(argv=None):
    p = argparse.ArgumentParser(
        prog="ostop",
        description="Optimal stopping of one-dimensional diffusions: "
                    "free boundaries, value functions, verification.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="solve one problem file")
    ps.add_argument("problem")
    ps.add_argument("--out-dir", default=None)
    ps.add_argument("--verify-level", choices=["none", "fast", "full"],
                    default=None)
    ps.add_argument("--seed", type=int, default=None)
    ps.add_argument("--plot", action="store_true")

    pw = sub.add_parser("sweep", help="re-solve across a payoff parameter")
    pw.add_argument("problem")
    pw.add_argument("--param", required=True)
    pw.add_argument("--from", dest="start", type=float, required=True)
    pw.add_argument("--to", dest="stop", type=float, required=True)
    pw.add_argument("--step", type=float, required=True)
    pw.add_argument("--out-dir", default=None)
    pw.add_argument("--seed", type=int, default=None)

    args = p.parse_args(argv)
    if args.command == "solve":
        return run(args.problem, args.out_dir, args.verify_level, args.seed,
                   args.plot)
    return sweep(args.problem, args.param, args.start, args.stop, args.step,
                 args.out_dir, args.seed)


if __name__ == "__main__":
    sys.exit(main())
