"""Carbon-aware energy management for a building with storage and flexible demand.

Grid imports, battery dispatch and deferrable demand are co-optimized against
day-ahead and real-time prices plus a carbon price on marginal emissions.
The package contains the hourly data pipeline, the dispatch MILP, an in-repo
simplex and branch-and-bound solver, a receding-horizon controller and an
attention-based forecaster for RT prices and carbon intensity.
"""

from .errors import CaemsError
from .market_data import ScenarioData, align_hourly, load_manifest, write_manifest
from .model import (
    DeviceParams, DispatchPlan, SettlementReport, baseline_plan, build_dispatch_problem, settle, validate_plan,
)
from .mpc import run_mpc
from .solver import brute_force_solve, solve_lp, solve_milp

__version__ = "0.1.0"

__all__ = [
    "CaemsError", "DeviceParams", "DispatchPlan", "ScenarioData", "SettlementReport", "align_hourly",
    "baseline_plan", "brute_force_solve", "build_dispatch_problem", "load_manifest", "run_mpc", "settle",
    "solve_lp", "solve_milp", "validate_plan", "write_manifest",
]
