"""Optimal stopping of one-dimensional Ito diffusions with state-dependent
discounting and difference-of-convex payoffs: classification into six
structural cases, free-boundary location, value-function assembly, and
independent verification (variational inequalities, Monte Carlo, obstacle
oracle)."""

from .boundaries import (QFunctionals, Solution, l_phi_map, l_psi_map,
                         paste_intervals, solve_case_I, solve_case_II,
                         solve_case_III, solve_case_IV, solve_case_V,
                         solve_case_VI)
from .classifier import (Case, Classification, SignPattern, TurningPoints,
                         classify, sign_partition, turning_point_phi,
                         turning_point_psi)
from .diffusion import (DiffusionSpec, FundamentalPair, brownian_motion, cir,
                        custom, fundamental_solutions, geometric_bm,
                        hitting_factor, ornstein_uhlenbeck, validate_diffusion)
from .payoff import (GreenKernelIntegrals, PayoffDC, SignedMeasure,
                     calibrate_green_norm, check_growth_limits,
                     check_integrability, from_callables, from_polynomials,
                     kinked_linear, linear_combination, lop_measure,
                     representation_check, running_payoff_to_terminal,
                     slope_functionals, staircase)
from .pipeline import SolveOutcome, SolverOptions, solve_stopping_problem
from .value import (Component, RegionPartition, ValueFunction, assemble,
                    smooth_fit_report, verify_solution)
from .verify import (EstimateCI, GridSpec, SimConfig, dynkin_check,
                     estimate_value, mc_hitting_factor, perturbation_test,
                     psor_oracle)

__version__ = "0.1.0"
