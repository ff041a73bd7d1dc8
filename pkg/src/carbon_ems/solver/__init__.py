"""LP and MILP solvers for dispatch problems."""

from .milp import BnbStats, brute_force_search, brute_force_solve, cancel_simultaneous, solve_lp_highs, solve_milp
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram, LpSolution, complementary_slackness_residual, solve_lp

__all__ = [
    "BnbStats", "brute_force_search", "brute_force_solve", "cancel_simultaneous", "solve_lp_highs", "solve_milp",
    "INFEASIBLE", "OPTIMAL", "UNBOUNDED", "LinearProgram", "LpSolution", "complementary_slackness_residual", "solve_lp",
]
