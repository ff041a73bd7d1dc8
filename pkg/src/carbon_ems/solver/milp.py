"""Branch-and-bound over the storage mode binaries, plus an enumeration oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, TextIO

import numpy as np

from ..errors import HorizonTooLarge, Infeasible, NodeLimitExceeded, NumericalBreakdown
from ..model import DispatchPlan, MilpProblem, VariableLayout
from .simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, LpSolution, solve_lp

INT_TOL = 1e-9
FEAS_TOL = 1e-7
BRUTE_FORCE_MAX_T = 8

# per-hour (u_ch, u_dis) for the enumeration oracle
MODES = {"charge": (1.0, 0.0), "discharge": (0.0, 1.0), "idle": (0.0, 0.0)}


@dataclass
class BnbStats:
    nodes_explored: int = 0
    best_bound: float = -math.inf
    incumbent: float = math.inf
    gap: float = math.inf
    root_integral: bool = False


def _layout(problem: MilpProblem) -> VariableLayout:
    return problem.layout or VariableLayout(problem.horizon)


def cancel_simultaneous(problem: MilpProblem, x: np.ndarray, lower=None, upper=None) -> np.ndarray:
    """Remove simultaneous charge/discharge and set the mode flags to match.

    Where ``g_b > 0`` and ``b_g + b_d > 0`` in the same hour, the common
    amount is taken off both sides (from ``b_g`` first, then ``b_d``; energy
    no longer supplied by ``b_d`` is bought through ``g_d``). Net storage
    power, SoC and net import are unchanged, so the objective is too.
    """
    lay = _layout(problem)
    lower = problem.lower if lower is None else lower
    upper = problem.upper if upper is None else upper
    x = np.array(x, dtype=float)
    for t in range(problem.horizon):
        i_gb, i_bg, i_bd, i_gd = (lay.index(v, t) for v in ("g_b", "b_g", "b_d", "g_d"))
        gb, bg, bd = max(x[i_gb], 0.0), max(x[i_bg], 0.0), max(x[i_bd], 0.0)
        m = min(gb, bg + bd)
        if m > 0:
            from_bg = min(bg, m)
            from_bd = m - from_bg
            x[i_gb] = gb - m
            x[i_bg] = bg - from_bg
            x[i_bd] = bd - from_bd
            x[i_gd] += from_bd
        for name, active in (("u_ch", x[i_gb] > INT_TOL), ("u_dis", x[i_bg] + x[i_bd] > INT_TOL)):
            i = lay.index(name, t)
            x[i] = min(max(1.0 if active else 0.0, lower[i]), upper[i])
    return x


def is_integer_feasible(problem: MilpProblem, x: np.ndarray, lower=None, upper=None, tol: float = FEAS_TOL) -> bool:
    lower = problem.lower if lower is None else lower
    upper = problem.upper if upper is None else upper
    ints = np.asarray(problem.integrality, dtype=int)
    if ints.size and np.max(np.abs(x[ints] - np.round(x[ints]))) > INT_TOL:
        return False
    if np.any(x < lower - tol) or np.any(x > upper + tol):
        return False
    if problem.A_eq.size and np.max(np.abs(problem.A_eq @ x - problem.b_eq)) > tol:
        return False
    if problem.A_ub.size and np.max(problem.A_ub @ x - problem.b_ub) > tol:
        return False
    return True


def _most_fractional(problem: MilpProblem, x: np.ndarray) -> int | None:
    ints = np.asarray(problem.integrality, dtype=int)
    if ints.size == 0:
        return None
    vals = x[ints]
    frac = np.minimum(vals - np.floor(vals), np.ceil(vals) - vals)
    k = int(np.argmax(frac))  # first maximum = earliest hour, u_ch before u_dis
    if frac[k] <= INT_TOL:
        return None
    return int(ints[k])


def _finalize(problem: MilpProblem, x: np.ndarray) -> DispatchPlan:
    x = x.copy()
    ints = np.asarray(problem.integrality, dtype=int)
    x[ints] = np.round(x[ints])
    return problem.to_plan(x)


def solve_milp(
    problem: MilpProblem,
    rel_gap: float = 1e-6,
    node_limit: int = 100_000,
    postprocess: bool = True,
    trace: TextIO | Callable[[str], None] | None = None,
    lp_solver: Callable[..., LpSolution] = solve_lp,
) -> tuple[DispatchPlan, BnbStats]:
    """Depth-first branch-and-bound on the mode binaries.

    Each node's LP optimum is first passed through :func:`cancel_simultaneous`;
    if that yields an integer-feasible point the node is solved. Otherwise the
    most fractional binary is branched on, ``u = 1`` explored first.
    """
    log = _make_logger(trace)
    stats = BnbStats()
    best_x = None
    stack = [(problem.lower.copy(), problem.upper.copy(), -math.inf, 0)]
    pruned_bounds: list[float] = []

    def cutoff() -> float:
        return stats.incumbent - rel_gap * max(1.0, abs(stats.incumbent))

    while stack:
        if stats.nodes_explored >= node_limit:
            open_bounds = [b for _, _, b, _ in stack]
            stats.best_bound = min(open_bounds + pruned_bounds + [stats.incumbent])
            stats.gap = _gap(stats)
            plan = _finalize(problem, best_x) if best_x is not None else None
            log(f"node-limit nodes={stats.nodes_explored} incumbent={stats.incumbent:.10g} bound={stats.best_bound:.10g}")
            raise NodeLimitExceeded(plan, stats)

        lo, hi, parent_bound, depth = stack.pop()
        if parent_bound >= cutoff():
            pruned_bounds.append(parent_bound)
            continue
        sol = lp_solver(problem.with_bounds(lo, hi))
        stats.nodes_explored += 1
        node = stats.nodes_explored

        if sol.status == INFEASIBLE:
            log(f"node={node} depth={depth} infeasible")
            continue
        if sol.status == UNBOUNDED:
            raise NumericalBreakdown("LP relaxation unbounded")
        if sol.objective >= cutoff():
            log(f"node={node} depth={depth} bound={sol.objective:.10g} pruned")
            pruned_bounds.append(sol.objective)
            continue

        x = sol.values
        if postprocess:
            x = cancel_simultaneous(problem, x, lo, hi)
        if is_integer_feasible(problem, x, lo, hi):
            obj = problem.objective(x)
            log(f"node={node} depth={depth} bound={sol.objective:.10g} integer obj={obj:.10g}")
            if obj < stats.incumbent:
                stats.incumbent = obj
                best_x = x
                if node == 1:
                    stats.root_integral = True
            continue

        j = _most_fractional(problem, sol.values)
        if j is None:
            # integral binaries but continuous part off tolerance: treat as numerical trouble
            raise NumericalBreakdown("integral node failed feasibility check")
        log(f"node={node} depth={depth} bound={sol.objective:.10g} branch var={j} value={sol.values[j]:.6g}")
        lo0, hi0 = lo.copy(), hi.copy()
        hi0[j] = 0.0
        lo1, hi1 = lo.copy(), hi.copy()
        lo1[j] = 1.0
        stack.append((lo0, hi0, sol.objective, depth + 1))
        stack.append((lo1, hi1, sol.objective, depth + 1))

    if best_x is None:
        raise Infeasible("no integer-feasible dispatch exists")
    stats.best_bound = min(pruned_bounds + [stats.incumbent])
    stats.gap = _gap(stats)
    log(f"done nodes={stats.nodes_explored} incumbent={stats.incumbent:.10g} bound={stats.best_bound:.10g} gap={stats.gap:.3g}")
    return _finalize(problem, best_x), stats


def _gap(stats: BnbStats) -> float:
    if not math.isfinite(stats.incumbent):
        return math.inf
    return max(0.0, stats.incumbent - stats.best_bound) / max(1.0, abs(stats.incumbent))


def _make_logger(trace):
    if trace is None:
        return lambda msg: None
    if callable(trace):
        return trace
    return lambda msg: trace.write(msg + "\n")


def brute_force_solve(problem: MilpProblem, lp_solver: Callable[..., LpSolution] = solve_lp) -> DispatchPlan:
    """Exact reference: solve the LP for every per-hour mode assignment.

    Enumerates all ``3**T`` combinations of charge / discharge / idle.
    """
    plan, _ = brute_force_search(problem, lp_solver)
    return plan


def brute_force_search(problem: MilpProblem, lp_solver: Callable[..., LpSolution] = solve_lp) -> tuple[DispatchPlan, float]:
    T = problem.horizon
    if T > BRUTE_FORCE_MAX_T:
        raise HorizonTooLarge(f"brute force limited to T <= {BRUTE_FORCE_MAX_T}, got {T}")
    lay = _layout(problem)
    ich = [lay.index("u_ch", t) for t in range(T)]
    idis = [lay.index("u_dis", t) for t in range(T)]
    best_obj, best_x = math.inf, None
    for combo in itertools.product(MODES.values(), repeat=T):
        lo, hi = problem.lower.copy(), problem.upper.copy()
        ok = True
        for t, (uc, ud) in enumerate(combo):
            for i, v in ((ich[t], uc), (idis[t], ud)):
                if not lo[i] <= v <= hi[i]:
                    ok = False
                lo[i] = hi[i] = v
        if not ok:
            continue
        sol = lp_solver(problem.with_bounds(lo, hi))
        if sol.status != OPTIMAL:
            continue
        if sol.objective < best_obj - 1e-12:
            best_obj, best_x = sol.objective, sol.values
    if best_x is None:
        raise Infeasible("no mode assignment admits a feasible dispatch")
    return _finalize(problem, best_x), problem.objective(best_x)


def solve_lp_highs(problem) -> LpSolution:
    """LP restriction via scipy's HiGHS, for use as an independent oracle."""
    from scipy.optimize import linprog

    bounds = list(zip(problem.lower, problem.upper))
    bounds = [(None if not math.isfinite(l) else l, None if not math.isfinite(u) else u) for l, u in bounds]
    res = linprog(
        problem.c,
        A_ub=problem.A_ub if problem.A_ub.size else None,
        b_ub=problem.b_ub if problem.A_ub.size else None,
        A_eq=problem.A_eq if problem.A_eq.size else None,
        b_eq=problem.b_eq if problem.A_eq.size else None,
        bounds=bounds,
        method="highs",
    )
    if res.status == 2:
        return LpSolution(INFEASIBLE, math.nan, np.full(len(problem.c), np.nan), 0)
    if res.status == 3:
        return LpSolution(UNBOUNDED, -math.inf, np.full(len(problem.c), np.nan), 0)
    if res.status != 0:
        raise NumericalBreakdown(f"HiGHS status {res.status}: {res.message}")
    return LpSolution(OPTIMAL, float(res.fun) + float(getattr(problem, "offset", 0.0)), np.asarray(res.x), int(res.nit))
