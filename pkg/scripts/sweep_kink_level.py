#!/usr/bin/env python3
"""Regime sweep of the kinked-linear payoff: re-solve across the kink
level c and record how the case label and the boundaries move."""

import argparse
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import ostop


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--from", dest="start", type=float, default=-2.0)
    ap.add_argument("--to", dest="stop", type=float, default=10.0)
    ap.add_argument("--step", type=float, default=0.5)
    args = ap.parse_args()

    spec = ostop.geometric_bm(0.0, 0.2, 0.01)
    print(f"{'c':>6} {'case':>12} {'a':>10} {'b':>10} {'A':>10} {'B':>10}")
    for c in np.arange(args.start, args.stop + args.step / 2, args.step):
        g = ostop.kinked_linear(float(c))
        out = ostop.solve_stopping_problem(spec, g)
        d = out.solution.diagnostics if out.solution else {}
        a = d.get("a", d.get("x_psi", np.nan))
        b = d.get("b", np.nan)
        A = d.get("A", 0.0)
        B = d.get("B", np.nan)
        print(f"{c:6.2f} {str(out.case):>12} {a:10.4f} {b:10.4f} "
              f"{A:10.4f} {B:10.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
