#!/usr/bin/env python3
"""Solve the two staircase benchmarks: quadratically growing levels (all
intermediate steps dominated, single upper boundary) and linearly growing
levels (every jump survives as a stopping atom)."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import ostop


def show(name, jumps, levels):
    spec = ostop.geometric_bm(0.0, 0.2, 0.01)
    g = ostop.staircase(jumps, levels)
    pair = ostop.fundamental_solutions(spec)
    print(f"\n{name}: levels {levels} at {jumps}")
    print("  level/psi at jumps:",
          ["%.4f" % (g(y) / float(pair.psi(y))) for y in jumps])
    out = ostop.solve_stopping_problem(spec, g)
    sol = out.solution
    print(f"  case {out.case}; surviving stopping atoms: "
          f"{sol.diagnostics['survivors']}")
    for c in sol.components:
        print(f"  ]{c.lo:g}, {c.hi:g}[ : A = {c.A:.4f}, B = {c.B:.4f}")
    print(f"  stopping region: {sol.partition.stopping}")
    print(f"  verification: {'passed' if out.verification.passed else 'FAILED'}")


def main():
    show("quadratic steps", [2, 4, 6, 8, 10], [0, 1, 4, 9, 16, 25])
    show("linear steps", [2, 4, 6, 8, 10], [0, 2, 4, 6, 8, 10])
    return 0


if __name__ == "__main__":
    sys.exit(main())
