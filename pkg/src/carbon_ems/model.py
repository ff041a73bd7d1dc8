"""Decision-variable layout, MILP assembly and settlement of dispatch plans.

Hours are indexed ``0..T-1`` in code. The state chains ``soc`` and ``shift``
have ``T + 1`` entries: ``soc[0]`` is the initial state of charge and
``soc[t + 1]`` the state after hour ``t``; ``shift[0]`` is the carried
deferral and ``shift[T]`` must be zero.

Storage discharge is split between exports to the grid (``b_g``) and
energy delivered directly to the building (``b_d``). Both draw from the
battery: ``b_net = g_b - b_g - b_d`` and the rate limit and discharge-mode
binary bound their sum. ``strict_paper=True`` pins ``b_d`` to zero.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InfeasibleBoundary, LengthMismatch
from .market_data import ScenarioData

HOURLY_VARS = ("g", "g_d", "g_b", "b_g", "b_d", "b_net", "u_ch", "u_dis")
CHAIN_VARS = ("soc", "shift")
BINARY_VARS = ("u_ch", "u_dis")


@dataclass(frozen=True)
class DeviceParams:
    """Battery and flexible-demand limits (energies in MWh, one-hour steps)."""

    soc_min: float = 0.0
    soc_max: float = 0.0
    soc_init: float = 0.0
    rate_max: float = 0.0
    shift_max: float = 0.0
    shift_init: float = 0.0
    carbon_price: float = 0.0

    def __post_init__(self):
        for name in ("soc_min", "soc_max", "soc_init", "rate_max", "shift_max", "shift_init", "carbon_price"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            if v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")
        if self.soc_min > self.soc_max:
            raise ValueError("soc_min exceeds soc_max")

    def check_boundary(self) -> None:
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise InfeasibleBoundary(
                f"soc_init={self.soc_init} outside [{self.soc_min}, {self.soc_max}]"
            )
        if self.shift_init > self.shift_max:
            raise InfeasibleBoundary(f"shift_init={self.shift_init} exceeds shift_max={self.shift_max}")

    def with_(self, **changes) -> "DeviceParams":
        fields = {**self.__dict__, **changes}
        return DeviceParams(**fields)


class VariableLayout:
    """Flat index map: eight hourly blocks of length T, then two chains of T+1."""

    def __init__(self, horizon: int):
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        self.horizon = T = horizon
        self._offset = {}
        pos = 0
        for name in HOURLY_VARS:
            self._offset[name] = pos
            pos += T
        for name in CHAIN_VARS:
            self._offset[name] = pos
            pos += T + 1
        self.n_vars = pos

    def length(self, name: str) -> int:
        return self.horizon + 1 if name in CHAIN_VARS else self.horizon

    def index(self, name: str, hour: int) -> int:
        if not 0 <= hour < self.length(name):
            raise IndexError(f"{name}[{hour}] outside horizon")
        return self._offset[name] + hour

    def block(self, name: str) -> slice:
        start = self._offset[name]
        return slice(start, start + self.length(name))

    def var_index(self) -> dict[tuple[str, int], int]:
        return {
            (name, h): self.index(name, h)
            for name in HOURLY_VARS + CHAIN_VARS
            for h in range(self.length(name))
        }

    def binaries(self) -> tuple[int, ...]:
        return tuple(self.index(name, h) for h in range(self.horizon) for name in BINARY_VARS)


@dataclass
class DispatchPlan:
    """Per-hour values of every decision variable."""

    g: np.ndarray
    g_d: np.ndarray
    g_b: np.ndarray
    b_g: np.ndarray
    b_d: np.ndarray
    b_net: np.ndarray
    u_ch: np.ndarray
    u_dis: np.ndarray
    soc: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        for name in HOURLY_VARS + CHAIN_VARS:
            setattr(self, name, np.array(getattr(self, name), dtype=float))
        T = len(self.g)
        for name in HOURLY_VARS:
            if len(getattr(self, name)) != T:
                raise LengthMismatch(f"{name} has length {len(getattr(self, name))}, expected {T}")
        for name in CHAIN_VARS:
            if len(getattr(self, name)) != T + 1:
                raise LengthMismatch(f"{name} has length {len(getattr(self, name))}, expected {T + 1}")

    @property
    def horizon(self) -> int:
        return len(self.g)

    @property
    def discharge(self) -> np.ndarray:
        return self.b_g + self.b_d

    def copy(self) -> "DispatchPlan":
        return DispatchPlan(**{n: getattr(self, n).copy() for n in HOURLY_VARS + CHAIN_VARS})

    def to_vector(self, layout: VariableLayout | None = None) -> np.ndarray:
        layout = layout or VariableLayout(self.horizon)
        x = np.zeros(layout.n_vars)
        for name in HOURLY_VARS + CHAIN_VARS:
            x[layout.block(name)] = getattr(self, name)
        return x

    @classmethod
    def from_vector(cls, x: np.ndarray, layout: VariableLayout) -> "DispatchPlan":
        return cls(**{name: np.array(x[layout.block(name)]) for name in HOURLY_VARS + CHAIN_VARS})

    @classmethod
    def concat(cls, steps: Sequence["DispatchPlan"]) -> "DispatchPlan":
        """Join consecutive plans (chains are taken as continuous)."""
        if not steps:
            raise ValueError("nothing to concatenate")
        fields = {name: np.concatenate([getattr(p, name) for p in steps]) for name in HOURLY_VARS}
        for name in CHAIN_VARS:
            fields[name] = np.concatenate([getattr(steps[0], name)[:1]] + [getattr(p, name)[1:] for p in steps])
        return cls(**fields)

    # CSV: one row per hour; chain values appear as start/end-of-hour pairs.
    CSV_COLUMNS = ("hour", "g", "g_d", "g_b", "b_g", "b_d", "b_net", "u_ch", "u_dis",
                   "soc_start", "soc_end", "shift_start", "shift_end")

    def to_csv(self, path: str | Path | None = None, fmt: str = "{:.6g}") -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for t in range(self.horizon):
            vals = [getattr(self, n)[t] for n in HOURLY_VARS]
            vals += [self.soc[t], self.soc[t + 1], self.shift[t], self.shift[t + 1]]
            w.writerow([t] + [fmt.format(_clean_zero(v)) for v in vals])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, text: str) -> "DispatchPlan":
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise ValueError("plan CSV has no rows")
        fields = {n: [float(r[n]) for r in rows] for n in HOURLY_VARS}
        fields["soc"] = [float(rows[0]["soc_start"])] + [float(r["soc_end"]) for r in rows]
        fields["shift"] = [float(rows[0]["shift_start"])] + [float(r["shift_end"]) for r in rows]
        return cls(**fields)


def _clean_zero(v: float) -> float:
    # avoid "-0" in emitted files
    return 0.0 if v == 0 else float(v)


def baseline_plan(scenario: ScenarioData, params: DeviceParams | None = None) -> DispatchPlan:
    """Unmanaged operation: grid imports exactly match demand."""
    T = scenario.steps
    soc0 = params.soc_init if params is not None else 0.0
    z = np.zeros(T)
    d = np.asarray(scenario.demand, dtype=float)
    return DispatchPlan(g=d.copy(), g_d=d.copy(), g_b=z, b_g=z, b_d=z, b_net=z, u_ch=z, u_dis=z,
                        soc=np.full(T + 1, soc0), shift=np.zeros(T + 1))


@dataclass(frozen=True, eq=False)
class MilpProblem:
    """``min c @ x + offset`` s.t. ``A_eq x = b_eq``, ``A_ub x <= b_ub``, bounds, binaries.

    Row labels (``eq_names`` / ``ub_names``) are ``(constraint, hour)`` pairs.
    """

    horizon: int
    c: np.ndarray
    offset: float
    A_eq: np.ndarray
    b_eq: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integrality: tuple[int, ...]
    var_index: dict
    eq_names: tuple = ()
    ub_names: tuple = ()
    strict_paper: bool = False
    layout: VariableLayout | None = field(default=None, repr=False)

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.offset)

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "MilpProblem":
        return MilpProblem(
            self.horizon, self.c, self.offset, self.A_eq, self.b_eq, self.A_ub, self.b_ub,
            np.asarray(lower, float), np.asarray(upper, float), self.integrality, self.var_index,
            self.eq_names, self.ub_names, self.strict_paper, self.layout,
        )

    def with_offset(self, offset: float) -> "MilpProblem":
        p = self.with_bounds(self.lower, self.upper)
        object.__setattr__(p, "offset", float(offset))
        return p

    def to_plan(self, x: np.ndarray) -> DispatchPlan:
        return DispatchPlan.from_vector(x, self.layout or VariableLayout(self.horizon))


def objective_coefficients(scenario: ScenarioData, carbon_price: float) -> tuple[np.ndarray, float]:
    """Per-hour import coefficients and the constant DA offset of the total cost."""
    rt = scenario.rt_price + carbon_price * scenario.rt_carbon
    da = scenario.da_price + carbon_price * scenario.da_carbon
    beta = scenario.baseline
    offset = float(np.sum(da * beta) - np.sum(rt * beta))
    return np.array(rt, dtype=float), offset


def build_dispatch_problem(
    scenario: ScenarioData,
    params: DeviceParams,
    strict_paper: bool = False,
    include_offset: bool = True,
) -> MilpProblem:
    """Assemble the dispatch MILP over the scenario's horizon.

    The objective is ``sum_t (pi_rt + pi_c * c_rt) * g_t`` plus a constant
    offset reproducing the DA settlement and the ``-beta`` part of the RT
    settlement, so ``objective(x)`` equals the full settled cost.
    """
    T = scenario.steps
    if T < 1:
        raise ValueError("horizon must be >= 1")
    params.check_boundary()
    lay = VariableLayout(T)
    n = lay.n_vars
    ix = lay.index
    a = params.rate_max

    coef, offset = objective_coefficients(scenario, params.carbon_price)
    c = np.zeros(n)
    c[lay.block("g")] = coef

    lower = np.zeros(n)
    upper = np.full(n, np.inf)
    lower[lay.block("g")] = -np.inf
    for name in ("g_b", "b_g", "b_d"):
        upper[lay.block(name)] = a
    if strict_paper:
        upper[lay.block("b_d")] = 0.0
    lower[lay.block("b_net")] = -a
    upper[lay.block("b_net")] = a
    for name in BINARY_VARS:
        upper[lay.block(name)] = 1.0
    lower[lay.block("soc")] = params.soc_min
    upper[lay.block("soc")] = params.soc_max
    lower[lay.block("shift")] = 0.0
    upper[lay.block("shift")] = params.shift_max
    lower[ix("soc", 0)] = upper[ix("soc", 0)] = params.soc_init
    lower[ix("shift", 0)] = upper[ix("shift", 0)] = params.shift_init
    lower[ix("shift", T)] = upper[ix("shift", T)] = 0.0

    eq_rows, b_eq, eq_names = [], [], []
    ub_rows, b_ub, ub_names = [], [], []

    def row(entries):
        r = np.zeros(n)
        for name, h, v in entries:
            r[ix(name, h)] += v
        return r

    d = scenario.demand
    for t in range(T):
        eq_rows.append(row([("g_d", t, 1), ("b_d", t, 1), ("shift", t + 1, 1), ("shift", t, -1)]))
        b_eq.append(d[t])
        eq_names.append(("balance", t))
        eq_rows.append(row([("g", t, 1), ("g_d", t, -1), ("g_b", t, -1), ("b_g", t, 1)]))
        b_eq.append(0.0)
        eq_names.append(("net-import", t))
        eq_rows.append(row([("b_net", t, 1), ("g_b", t, -1), ("b_g", t, 1), ("b_d", t, 1)]))
        b_eq.append(0.0)
        eq_names.append(("ess-power", t))
        eq_rows.append(row([("soc", t + 1, 1), ("soc", t, -1), ("b_net", t, -1)]))
        b_eq.append(0.0)
        eq_names.append(("soc-dynamics", t))

        ub_rows.append(row([("g_b", t, 1), ("u_ch", t, -a)]))
        b_ub.append(0.0)
        ub_names.append(("charge-mode", t))
        ub_rows.append(row([("b_g", t, 1), ("b_d", t, 1), ("u_dis", t, -a)]))
        b_ub.append(0.0)
        ub_names.append(("discharge-mode", t))
        ub_rows.append(row([("u_ch", t, 1), ("u_dis", t, 1)]))
        b_ub.append(1.0)
        ub_names.append(("mode-exclusivity", t))

    return MilpProblem(
        horizon=T,
        c=c,
        offset=offset if include_offset else 0.0,
        A_eq=np.array(eq_rows),
        b_eq=np.array(b_eq, dtype=float),
        A_ub=np.array(ub_rows),
        b_ub=np.array(b_ub, dtype=float),
        lower=lower,
        upper=upper,
        integrality=lay.binaries(),
        var_index=lay.var_index(),
        eq_names=tuple(eq_names),
        ub_names=tuple(ub_names),
        strict_paper=strict_paper,
        layout=lay,
    )


# --- settlement ----------------------------------------------------------------

def _check_lengths(plan: DispatchPlan, scenario: ScenarioData) -> None:
    if plan.horizon != scenario.steps:
        raise LengthMismatch(f"plan covers {plan.horizon} hours, scenario {scenario.steps}")


def energy_cost(plan: DispatchPlan, scenario: ScenarioData) -> float:
    """DA settlement of the baseline plus RT settlement of deviations ($)."""
    _check_lengths(plan, scenario)
    beta = scenario.baseline
    return float(np.sum(scenario.da_price * beta + scenario.rt_price * (plan.g - beta)))


def emissions(plan: DispatchPlan, scenario: ScenarioData) -> float:
    """Attributed emissions (tCO2); negative when RT sell-back outweighs DA."""
    _check_lengths(plan, scenario)
    beta = scenario.baseline
    return float(np.sum(scenario.da_carbon * beta + scenario.rt_carbon * (plan.g - beta)))


def carbon_cost(plan: DispatchPlan, scenario: ScenarioData, carbon_price: float) -> float:
    _check_lengths(plan, scenario)
    beta = scenario.baseline
    return float(np.sum(carbon_price * scenario.da_carbon * beta + carbon_price * scenario.rt_carbon * (plan.g - beta)))


@dataclass
class SettlementReport:
    energy_cost: float
    carbon_cost: float
    total: float
    emissions: float
    carbon_price: float
    per_hour: dict[str, np.ndarray]
    negative_emission_hours: list[int] = field(default_factory=list)

    @property
    def negative_emissions(self) -> bool:
        return bool(self.negative_emission_hours) or self.emissions < 0

    def to_dict(self) -> dict:
        return {
            "energy_cost": self.energy_cost,
            "carbon_cost": self.carbon_cost,
            "total": self.total,
            "emissions": self.emissions,
            "carbon_price": self.carbon_price,
            "negative_emission_hours": list(self.negative_emission_hours),
            "per_hour": {k: [float(x) for x in v] for k, v in self.per_hour.items()},
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def settle(plan: DispatchPlan, scenario: ScenarioData, carbon_price: float) -> SettlementReport:
    """Full settlement with an hourly breakdown of each term."""
    _check_lengths(plan, scenario)
    beta = scenario.baseline
    dev = plan.g - beta
    per_hour = {
        "da_energy": scenario.da_price * beta,
        "rt_energy": scenario.rt_price * dev,
        "da_carbon": carbon_price * scenario.da_carbon * beta,
        "rt_carbon": carbon_price * scenario.rt_carbon * dev,
        "emissions": scenario.da_carbon * beta + scenario.rt_carbon * dev,
        "net_import": plan.g.copy(),
    }
    e = energy_cost(plan, scenario)
    cc = carbon_cost(plan, scenario, carbon_price)
    em = emissions(plan, scenario)
    neg = [int(t) for t in np.flatnonzero(per_hour["emissions"] < 0)]
    return SettlementReport(e, cc, e + cc, em, float(carbon_price), per_hour, neg)


# --- feasibility checking ---------------------------------------------------

@dataclass(frozen=True)
class Violation:
    hour: int
    constraint: str
    residual: float


def validate_plan(
    plan: DispatchPlan,
    scenario: ScenarioData,
    params: DeviceParams,
    tol: float = 1e-6,
    strict_paper: bool = False,
) -> list[Violation]:
    """List every constraint violated by more than ``tol`` (empty means feasible)."""
    _check_lengths(plan, scenario)
    T = plan.horizon
    a = params.rate_max
    out: list[Violation] = []

    def check(name, residuals, first_hour=0):
        residuals = np.atleast_1d(np.asarray(residuals, dtype=float))
        for h in np.flatnonzero(~(residuals <= tol)):
            out.append(Violation(int(h) + first_hour, name, float(residuals[h])))

    for name in HOURLY_VARS + CHAIN_VARS:
        arr = getattr(plan, name)
        bad = ~np.isfinite(arr)
        for h in np.flatnonzero(bad):
            out.append(Violation(int(h), "finite", math.inf))
    if out:
        return out

    check("nonnegativity", np.max(-np.vstack([plan.g_d, plan.g_b, plan.b_g, plan.b_d]), axis=0))
    check("balance", np.abs(scenario.demand - (plan.g_d + plan.b_d + np.diff(plan.shift))))
    check("net-import", np.abs(plan.g - (plan.g_d + plan.g_b - plan.b_g)))
    check("ess-power", np.abs(plan.b_net - (plan.g_b - plan.b_g - plan.b_d)))
    check("soc-dynamics", np.abs(np.diff(plan.soc) - plan.b_net))
    check("soc-initial", abs(plan.soc[0] - params.soc_init))
    check("soc-bounds", np.maximum(params.soc_min - plan.soc, plan.soc - params.soc_max))
    check("rate-limit", np.max(np.vstack([plan.g_b, plan.b_g, plan.b_d, plan.discharge]), axis=0) - a)
    check("binary", np.minimum(np.abs(plan.u_ch), np.abs(plan.u_ch - 1)))
    check("binary", np.minimum(np.abs(plan.u_dis), np.abs(plan.u_dis - 1)))
    check("charge-mode", plan.g_b - plan.u_ch * a)
    check("discharge-mode", plan.discharge - plan.u_dis * a)
    check("mode-exclusivity", plan.u_ch + plan.u_dis - 1)
    check("shift-bounds", np.maximum(-plan.shift, plan.shift - params.shift_max))
    check("initial-shift", abs(plan.shift[0] - params.shift_init))
    check("terminal-shift", abs(plan.shift[T]), first_hour=T)
    if strict_paper:
        check("no-direct-discharge", np.abs(plan.b_d))
    return out
