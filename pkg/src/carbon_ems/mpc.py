"""Receding-horizon control of the dispatch problem.

At each hour the controller forecasts the RT price and intensity over the
next window, solves the dispatch MILP with the battery charge and deferred
demand pinned to their current values, implements only the first hour and
settles it against the realized signals.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import CaemsError, Infeasible, InfeasibleHorizon
from .forecast.base import Forecaster
from .market_data import ScenarioData
from .model import CHAIN_VARS, HOURLY_VARS, DeviceParams, DispatchPlan, SettlementReport, build_dispatch_problem, settle
from .solver import solve_milp

DAY = 24
HORIZON_POLICIES = ("day-end", "rolling")
DA_CARBON_SOURCES = ("actual", "forecast")


@dataclass(frozen=True)
class CarbonCoefficients:
    """Carbon cost per MWh: DA per hour and RT per forecast step ($/MWh)."""

    lambda_da: np.ndarray
    lambda_rt_hat: np.ndarray


def carbon_coefficients(da_carbon, rt_carbon_forecast, carbon_price: float) -> CarbonCoefficients:
    if carbon_price < 0:
        raise ValueError("carbon_price must be nonnegative")
    return CarbonCoefficients(
        lambda_da=carbon_price * np.asarray(da_carbon, dtype=float),
        lambda_rt_hat=carbon_price * np.asarray(rt_carbon_forecast, dtype=float),
    )


@dataclass
class StepLog:
    hour: int
    horizon: int
    rt_price_forecast: float
    rt_price_actual: float
    rt_carbon_forecast: float
    rt_carbon_actual: float
    g: float
    b_net: float
    shift: float
    soc: float
    cost: float
    emissions: float
    cumulative_cost: float
    cumulative_emissions: float
    fallback: bool = False


@dataclass
class ControllerState:
    t: int
    soc: float
    shift: float
    realized: list[DispatchPlan] = field(default_factory=list)
    logs: list[StepLog] = field(default_factory=list)

    def check(self, params: DeviceParams, tol: float = 1e-6) -> None:
        if not params.soc_min - tol <= self.soc <= params.soc_max + tol:
            raise InfeasibleHorizon(f"hour {self.t}: soc={self.soc} outside [{params.soc_min}, {params.soc_max}]")
        if not -tol <= self.shift <= params.shift_max + tol:
            raise InfeasibleHorizon(f"hour {self.t}: shift={self.shift} outside [0, {params.shift_max}]")


def window_length(t: int, horizon: str | int, day_length: int = DAY, day_start: int = 0) -> int:
    """Hours planned at ``t``: to the end of the day, or ``H`` clipped at day end."""
    day_end = day_start + ((t - day_start) // day_length + 1) * day_length
    if horizon == "day-end":
        return day_end - t
    H = int(horizon)
    if H < 1:
        raise ValueError("rolling horizon must be >= 1")
    return min(H, day_end - t)


def forecast_window(
    scenario: ScenarioData,
    forecaster: Forecaster,
    t: int,
    H: int,
    da_carbon_source: str = "actual",
) -> ScenarioData:
    """Scenario over ``[t, t + H)`` with RT signals replaced by forecasts."""
    pred = forecaster.forecast(scenario, t, H)
    window = scenario.slice(t, t + H)
    changes = {ch: np.clip(v, 0.0, None) if "carbon" in ch else v for ch, v in pred.items() if ch in ("rt_price", "rt_carbon")}
    if da_carbon_source == "forecast" and "rt_carbon" in changes:
        # no DA intensity signal: stand in with the RT intensity forecast
        changes["da_carbon"] = changes["rt_carbon"]
    elif da_carbon_source not in DA_CARBON_SOURCES:
        raise ValueError(f"da_carbon_source must be one of {DA_CARBON_SOURCES}")
    return window.replace(**changes)


def _first_hour(plan: DispatchPlan) -> DispatchPlan:
    fields = {n: getattr(plan, n)[:1] for n in HOURLY_VARS}
    fields.update({n: getattr(plan, n)[:2] for n in CHAIN_VARS})
    return DispatchPlan(**fields)


def fallback_step(state: ControllerState, demand: float) -> DispatchPlan:
    """No-flexibility action: battery idle, deferred demand repaid now."""
    repay = state.shift
    z = np.zeros(1)
    g = np.array([demand + repay])
    return DispatchPlan(g=g, g_d=g.copy(), g_b=z, b_g=z, b_d=z, b_net=z, u_ch=z, u_dis=z,
                        soc=np.array([state.soc, state.soc]), shift=np.array([state.shift, 0.0]))


def mpc_step(
    state: ControllerState,
    scenario: ScenarioData,
    forecaster: Forecaster,
    horizon: int,
    params: DeviceParams,
    strict_paper: bool = False,
    da_carbon_source: str = "actual",
    solver: Callable = solve_milp,
) -> tuple[DispatchPlan, DispatchPlan, ControllerState]:
    """Plan ``horizon`` hours from ``state.t`` and implement the first one.

    Returns the one-hour implemented plan, the full planned trajectory (in
    forecast terms) and the advanced state. The realized settlement of the
    implemented hour is logged using actual prices and intensities.
    """
    t = state.t
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if t + horizon > scenario.steps:
        raise ValueError(f"window [{t}, {t + horizon}) runs past the scenario")
    state.check(params)
    window = forecast_window(scenario, forecaster, t, horizon, da_carbon_source)
    pinned = params.with_(soc_init=float(np.clip(state.soc, params.soc_min, params.soc_max)),
                          shift_init=float(np.clip(state.shift, 0.0, params.shift_max)))
    try:
        planned, _ = solver(build_dispatch_problem(window, pinned, strict_paper=strict_paper))
    except Infeasible as exc:
        raise InfeasibleHorizon(f"hour {t}: {exc}") from exc
    first = _first_hour(planned)
    new_state = _advance(state, first, scenario, window, params.carbon_price, horizon, fallback=False)
    return first, planned, new_state


def _advance(state: ControllerState, first: DispatchPlan, scenario: ScenarioData, window: ScenarioData,
             carbon_price: float, horizon: int, fallback: bool) -> ControllerState:
    t = state.t
    actual = scenario.slice(t, t + 1)
    rep = settle(first, actual, carbon_price)
    prev_cost = state.logs[-1].cumulative_cost if state.logs else 0.0
    prev_em = state.logs[-1].cumulative_emissions if state.logs else 0.0
    log = StepLog(
        hour=t, horizon=horizon,
        rt_price_forecast=float(window.rt_price[0]), rt_price_actual=float(actual.rt_price[0]),
        rt_carbon_forecast=float(window.rt_carbon[0]), rt_carbon_actual=float(actual.rt_carbon[0]),
        g=float(first.g[0]), b_net=float(first.b_net[0]), shift=float(first.shift[1]), soc=float(first.soc[1]),
        cost=rep.total, emissions=rep.emissions,
        cumulative_cost=prev_cost + rep.total, cumulative_emissions=prev_em + rep.emissions,
        fallback=fallback,
    )
    return ControllerState(t + 1, float(first.soc[1]), float(first.shift[1]),
                           state.realized + [first], state.logs + [log])


@dataclass
class MpcResult:
    plan: DispatchPlan
    report: SettlementReport
    logs: list[StepLog]
    start: int
    stop: int

    def log_csv(self, path: str | Path | None = None) -> str:
        return write_step_log(self.logs, path)


def run_mpc(
    scenario: ScenarioData,
    forecaster: Forecaster,
    params: DeviceParams,
    horizon: str | int = "day-end",
    start: int = 0,
    stop: int | None = None,
    strict_paper: bool = False,
    da_carbon_source: str = "actual",
    day_length: int = DAY,
    solver: Callable = solve_milp,
) -> MpcResult:
    """Run the controller over hours ``[start, stop)`` of ``scenario``.

    ``horizon`` is ``"day-end"`` (shrinking window, the deferred-demand
    terminal condition lands on the day boundary) or an integer ``H`` for a
    rolling window clipped at the day boundary. Hours before ``start`` serve
    as forecaster history only. Battery charge carries across days.
    """
    stop = scenario.steps if stop is None else stop
    if not 0 <= start < stop <= scenario.steps:
        raise ValueError(f"bad hour range [{start}, {stop}) for a {scenario.steps}-hour scenario")
    if horizon != "day-end" and not (isinstance(horizon, (int, np.integer)) and horizon >= 1):
        raise ValueError(f"horizon must be 'day-end' or a positive integer, got {horizon!r}")
    params.check_boundary()
    state = ControllerState(start, params.soc_init, params.shift_init)
    while state.t < stop:
        t = state.t
        H = min(window_length(t, horizon, day_length, day_start=start), stop - t)
        try:
            _, _, state = mpc_step(state, scenario, forecaster, H, params, strict_paper, da_carbon_source, solver)
        except InfeasibleHorizon:
            first = fallback_step(state, float(scenario.demand[t]))
            window = scenario.slice(t, t + 1)
            state = _advance(state, first, scenario, window, params.carbon_price, H, fallback=True)
        except CaemsError as exc:
            if f"hour {t}" in str(exc) or not _single_arg(exc):
                raise
            raise type(exc)(f"hour {t}: {exc}") from exc
    plan = DispatchPlan.concat(state.realized)
    report = settle(plan, scenario.slice(start, stop), params.carbon_price)
    return MpcResult(plan, report, state.logs, start, stop)


def _single_arg(exc: Exception) -> bool:
    return len(exc.args) == 1 and isinstance(exc.args[0], str)


LOG_COLUMNS = ("hour", "horizon", "rt_price_forecast", "rt_price_actual", "rt_carbon_forecast",
               "rt_carbon_actual", "g", "b_net", "shift", "soc", "cost", "emissions",
               "cumulative_cost", "cumulative_emissions", "fallback")


def write_step_log(logs: list[StepLog], path: str | Path | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for rec in logs:
        row = []
        for col in LOG_COLUMNS:
            v = getattr(rec, col)
            if isinstance(v, bool):
                row.append(int(v))
            elif isinstance(v, int):
                row.append(v)
            else:
                row.append(f"{0.0 if v == 0 else v:.6g}")
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
