"""Command-line scenario runner: carbon-price sweeps, MPC runs and reports.

Example::

    carbon-ems --mode perfect --carbon-price 0,10,20,30 --out results/
    carbon-ems --config run.yaml --mode mpc --forecaster seasonal24 --horizon rolling:6

Each run writes ``{day}_{price}_plan.csv`` per (day, carbon price),
``frontier.csv`` with one row per (day, carbon price) and ``summary.json``.
Exit codes: 0 success, 1 configuration error, 2 infeasible instance,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .errors import (
    CaemsError, ConfigError, DivergedLoss, ForecastFailure, Infeasible, InfeasibleBoundary,
    InfeasibleHorizon, InsufficientHistory, MissingSeries, NodeLimitExceeded, NumericalBreakdown,
)
from .forecast import AttentionForecaster, BaselineForecaster, Forecaster, PerfectForecaster, TrainConfig
from .forecast import load_params, rolling_windows, save_params, train
from .market_data import RT_CHANNELS, ScenarioData, format_timestamp, load_manifest
from .model import DeviceParams, DispatchPlan, SettlementReport, baseline_plan, build_dispatch_problem, settle
from .mpc import StepLog, run_mpc, write_step_log
from .scenarios import SyntheticConfig, default_device_params, synthetic_scenario
from .solver import solve_milp

log = logging.getLogger("carbon_ems")

MODES = ("baseline", "perfect", "mpc")
FORECASTERS = ("persistence", "seasonal24", "linear-ar", "attention")
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERICAL = 0, 1, 2, 3
PARETO_TOL = 1e-6
DAY = 24


def fmt(v: float) -> str:
    """Six significant digits, never ``-0``."""
    v = float(v)
    s = f"{v:.6g}"
    return "0" if s in ("-0", "0") else s


def round6(v: float) -> float:
    return float(fmt(v))


def parse_carbon_prices(text: str | Sequence[float]) -> tuple[float, ...]:
    if isinstance(text, str):
        items = [s for s in text.replace(" ", "").split(",") if s]
        try:
            prices = tuple(float(s) for s in items)
        except ValueError:
            raise ConfigError(f"carbon prices must be numbers, got {text!r}") from None
    else:
        prices = tuple(float(v) for v in text)
    if not prices:
        raise ConfigError("at least one carbon price is required")
    if any(p < 0 or not np.isfinite(p) for p in prices):
        raise ConfigError(f"carbon prices must be finite and nonnegative, got {prices}")
    return prices


def parse_horizon(text: str | int) -> str | int:
    """``day-end`` or ``rolling:H`` (a bare integer is read as rolling)."""
    if isinstance(text, int):
        value = text
    else:
        text = str(text).strip()
        if text == "day-end":
            return text
        body = text.split(":", 1)[1] if text.startswith("rolling:") else text
        try:
            value = int(body)
        except ValueError:
            raise ConfigError(f"horizon must be 'day-end' or 'rolling:H', got {text!r}") from None
    if value < 1:
        raise ConfigError("rolling horizon must be >= 1")
    return value


@dataclass(frozen=True)
class RunConfig:
    scenario: str | None = None
    synthetic_days: int = 10
    mode: str = "perfect"
    carbon_prices: tuple[float, ...] = (0.0, 10.0, 20.0, 30.0)
    horizon: str | int = "day-end"
    forecaster: str | None = None
    weights: str | None = None
    device: DeviceParams = field(default_factory=default_device_params)
    out: str = "results"
    seed: int = 0
    verbosity: int = 0
    strict_paper: bool = False
    carry_soc: bool = False
    da_carbon_source: str = "actual"
    trace: bool = False
    training: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        object.__setattr__(self, "carbon_prices", parse_carbon_prices(self.carbon_prices))
        object.__setattr__(self, "horizon", parse_horizon(self.horizon))
        if self.mode == "mpc" and self.forecaster is None:
            raise ConfigError("mode 'mpc' requires a forecaster")
        if self.forecaster is not None and self.forecaster not in FORECASTERS:
            raise ConfigError(f"forecaster must be one of {FORECASTERS}, got {self.forecaster!r}")
        if self.da_carbon_source not in ("actual", "forecast"):
            raise ConfigError("da_carbon_source must be 'actual' or 'forecast'")
        if self.synthetic_days < 1:
            raise ConfigError("synthetic_days must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["carbon_prices"] = list(self.carbon_prices)
        d.pop("out")
        d.pop("verbosity")
        d.pop("trace")
        return d


_DEVICE_KEYS = {f.name for f in fields(DeviceParams)} - {"carbon_price"}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML run configuration; keys in ``overrides`` win."""
    raw: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping")
        base = path.parent
    raw = {**raw, **{k: v for k, v in (overrides or {}).items() if v is not None}}
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        dev = raw.get("device") or {}
        if isinstance(dev, dict):
            bad = sorted(set(dev) - _DEVICE_KEYS)
            if bad:
                raise ConfigError(f"unknown device keys: {', '.join(bad)}")
            raw["device"] = default_device_params().with_(**{k: float(v) for k, v in dev.items()})
        tr = raw.get("training") or {}
        if isinstance(tr, dict):
            bad = sorted(set(tr) - _TRAIN_KEYS)
            if bad:
                raise ConfigError(f"unknown training keys: {', '.join(bad)}")
            raw["training"] = TrainConfig(**{"seed": int(raw.get("seed", 0)), **tr})
        for key in ("scenario", "weights"):
            if raw.get(key) is not None and path is not None and not (overrides or {}).get(key):
                p = Path(raw[key])
                raw[key] = str(p if p.is_absolute() else base / p)
        return RunConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


# --- sweep -----------------------------------------------------------------

@dataclass
class FrontierRow:
    day: int
    date: str
    carbon_price: float
    energy_cost: float
    carbon_cost: float
    total: float
    emissions: float

    COLUMNS = ("day", "date", "carbon_price", "energy_cost", "carbon_cost", "total", "emissions")


@dataclass
class SweepReport:
    mode: str
    carbon_prices: tuple[float, ...]
    rows: list[FrontierRow] = field(default_factory=list)
    plans: dict[tuple[int, float], DispatchPlan] = field(default_factory=dict)
    step_logs: dict[tuple[int, float], list[StepLog]] = field(default_factory=dict)
    baseline: list[FrontierRow] = field(default_factory=list)
    reference: list[FrontierRow] = field(default_factory=list)
    warmup_days: list[int] = field(default_factory=list)
    pareto_violations: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def run_baseline(scenario: ScenarioData, params: DeviceParams) -> SettlementReport:
    """Unmanaged operation: imports track demand, no storage or shifting."""
    return settle(baseline_plan(scenario, params), scenario, params.carbon_price)


def _row(day: int, scenario: ScenarioData, price: float, rep: SettlementReport) -> FrontierRow:
    return FrontierRow(day, format_timestamp(scenario.start)[:10], price, rep.energy_cost,
                       rep.carbon_cost, rep.total, rep.emissions)


def check_pareto(rows: list[FrontierRow], tol: float = PARETO_TOL) -> list[str]:
    """Per day, emissions must not rise and energy cost must not fall as the carbon price grows."""
    problems = []
    by_day: dict[int, list[FrontierRow]] = {}
    for r in rows:
        by_day.setdefault(r.day, []).append(r)
    for day, rs in sorted(by_day.items()):
        rs = sorted(rs, key=lambda r: r.carbon_price)
        for a, b in zip(rs, rs[1:]):
            if b.emissions > a.emissions + tol:
                problems.append(f"day {day}: emissions rise from {a.emissions:.9g} at {a.carbon_price:g} "
                                f"to {b.emissions:.9g} at {b.carbon_price:g}")
            if b.energy_cost < a.energy_cost - tol:
                problems.append(f"day {day}: energy cost falls from {a.energy_cost:.9g} at {a.carbon_price:g} "
                                f"to {b.energy_cost:.9g} at {b.carbon_price:g}")
    return problems


def load_scenario(config: RunConfig) -> ScenarioData:
    if config.scenario is None:
        return synthetic_scenario(SyntheticConfig(days=config.synthetic_days, seed=config.seed))
    try:
        return load_manifest(config.scenario)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None


def build_forecaster(config: RunConfig, scenario: ScenarioData, out: Path | None = None) -> Forecaster:
    kind = config.forecaster
    if kind in ("persistence", "seasonal24", "linear-ar"):
        return BaselineForecaster(kind.replace("-", "_"))
    if kind == "attention":
        if config.weights is not None:
            try:
                return AttentionForecaster(load_params(config.weights))
            except OSError as exc:
                raise ConfigError(f"cannot read weights: {exc}") from None
        # no weights given: fit on the scenario itself and keep the result
        X, Y = rolling_windows(scenario.matrix(RT_CHANNELS), 24, 24)
        params = train(X, Y, config.training)
        if out is not None:
            save_params(params, out / "attention_weights")
        return AttentionForecaster(params)
    raise ConfigError(f"unknown forecaster {kind!r}")


def run_sweep(config: RunConfig, scenario: ScenarioData | None = None, trace=None,
              out: Path | None = None) -> SweepReport:
    """Solve every (day, carbon price) cell of the configured scenario."""
    scenario = scenario if scenario is not None else load_scenario(config)
    if scenario.steps % DAY:
        raise ConfigError(f"scenario has {scenario.steps} hours, not a whole number of days")
    days = scenario.steps // DAY
    report = SweepReport(config.mode, config.carbon_prices)
    forecaster = build_forecaster(config, scenario, out) if config.mode == "mpc" else None
    device = config.device
    device.check_boundary()

    for day in range(days):
        lo, hi = day * DAY, (day + 1) * DAY
        day_sc = scenario.slice(lo, hi)
        report.baseline.append(_row(day, day_sc, 0.0, run_baseline(day_sc, device)))
        if forecaster is not None and lo < forecaster.lookback:
            report.warmup_days.append(day)

    soc_start = {p: device.soc_init for p in config.carbon_prices}
    for day in range(days):
        lo, hi = day * DAY, (day + 1) * DAY
        day_sc = scenario.slice(lo, hi)
        if day in report.warmup_days:
            log.info("day %d skipped: forecaster needs %d hours of history", day, forecaster.lookback)
            continue
        for price in config.carbon_prices:
            params = device.with_(carbon_price=price)
            if config.carry_soc:
                params = params.with_(soc_init=soc_start[price])
            try:
                plan, rep, steps, ref = _solve_cell(config, scenario, day_sc, lo, hi, params, forecaster, trace)
            except CaemsError as exc:
                if not _rewrappable(exc):
                    raise
                raise type(exc)(f"day {day}, carbon price {price:g}: {exc}") from exc
            report.plans[(day, price)] = plan
            report.rows.append(_row(day, day_sc, price, rep))
            if steps is not None:
                report.step_logs[(day, price)] = steps
            if ref is not None:
                report.reference.append(_row(day, day_sc, price, ref))
            soc_start[price] = float(plan.soc[-1])
            log.info("day %d price %g: cost %.2f emissions %.4f", day, price, rep.energy_cost, rep.emissions)

    if config.mode == "perfect":
        report.pareto_violations = check_pareto(report.rows)
    return report


def _rewrappable(exc: Exception) -> bool:
    return len(exc.args) == 1 and isinstance(exc.args[0], str)


def _solve_cell(config, scenario, day_sc, lo, hi, params, forecaster, trace):
    if config.mode == "baseline":
        return baseline_plan(day_sc, params), run_baseline(day_sc, params), None, None
    if config.mode == "perfect" and config.horizon == "day-end":
        problem = build_dispatch_problem(day_sc, params, strict_paper=config.strict_paper)
        plan, _ = solve_milp(problem, trace=trace)
        return plan, settle(plan, day_sc, params.carbon_price), None, None
    if config.mode == "perfect":
        res = run_mpc(scenario, PerfectForecaster(DAY), params, config.horizon, lo, hi,
                      strict_paper=config.strict_paper)
        return res.plan, res.report, res.logs, None
    res = run_mpc(scenario, forecaster, params, config.horizon, lo, hi,
                  strict_paper=config.strict_paper, da_carbon_source=config.da_carbon_source)
    # perfect-foresight optimum of the same day, for comparison
    plan_pf, _ = solve_milp(build_dispatch_problem(day_sc, params, strict_paper=config.strict_paper))
    return res.plan, res.report, res.logs, settle(plan_pf, day_sc, params.carbon_price)


# --- reporting -------------------------------------------------------------

def plan_filename(day: int, price: float) -> str:
    return f"{day:02d}_{fmt(price)}_plan.csv"


def frontier_csv(rows: list[FrontierRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FrontierRow.COLUMNS)
    for r in sorted(rows, key=lambda r: (r.day, r.carbon_price)):
        w.writerow([r.day, r.date] + [fmt(getattr(r, c)) for c in FrontierRow.COLUMNS[2:]])
    return buf.getvalue()


def _totals(rows: list[FrontierRow], prices: Sequence[float]) -> dict:
    out = {}
    for p in prices:
        rs = [r for r in rows if r.carbon_price == p]
        out[fmt(p)] = {
            "days": len(rs),
            "energy_cost": round6(sum(r.energy_cost for r in rs)),
            "carbon_cost": round6(sum(r.carbon_cost for r in rs)),
            "total": round6(sum(r.total for r in rs)),
            "emissions": round6(sum(r.emissions for r in rs)),
        }
    return out


def summary_dict(report: SweepReport) -> dict:
    prices = report.carbon_prices
    solved_days = sorted({r.day for r in report.rows})
    base_rows = [r for r in report.baseline if r.day in solved_days]
    totals = _totals(report.rows, prices)
    base = {
        "energy_cost": round6(sum(r.energy_cost for r in base_rows)),
        "emissions": round6(sum(r.emissions for r in base_rows)),
    }
    relative = {}
    ref = totals.get(fmt(prices[0])) if prices else None
    for p in prices:
        t = totals[fmt(p)]
        entry = {}
        if ref and ref["emissions"]:
            entry["emissions_change_vs_first_price"] = round6(t["emissions"] / ref["emissions"] - 1.0)
        if ref and ref["energy_cost"]:
            entry["energy_cost_change_vs_first_price"] = round6(t["energy_cost"] / ref["energy_cost"] - 1.0)
        if base["emissions"]:
            entry["emissions_change_vs_baseline"] = round6(t["emissions"] / base["emissions"] - 1.0)
        if base["energy_cost"]:
            entry["energy_cost_change_vs_baseline"] = round6(t["energy_cost"] / base["energy_cost"] - 1.0)
        relative[fmt(p)] = entry
    out = {
        "mode": report.mode,
        "carbon_prices": [round6(p) for p in prices],
        "days_solved": solved_days,
        "warmup_days": report.warmup_days,
        "rows": len(report.rows),
        "totals": totals,
        "baseline": base,
        "relative": relative,
        "pareto_ok": not report.pareto_violations,
        "pareto_violations": report.pareto_violations,
        "run": report.meta,
    }
    if report.reference:
        out["perfect_foresight_totals"] = _totals(report.reference, prices)
    return out


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, float):
        return round6(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return _json_ready(obj.item())
    return obj


def emit_report(report: SweepReport, out: str | Path, formats: Sequence[str] = ("csv", "json")) -> list[Path]:
    """Write plan files, the frontier table and the summary; returns the paths written."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if "csv" in formats:
            for (day, price), plan in sorted(report.plans.items()):
                p = out / plan_filename(day, price)
                plan.to_csv(p)
                written.append(p)
            for (day, price), steps in sorted(report.step_logs.items()):
                p = out / f"{day:02d}_{fmt(price)}_steps.csv"
                write_step_log(steps, p)
                written.append(p)
            p = out / "frontier.csv"
            p.write_text(frontier_csv(report.rows))
            written.append(p)
        if "json" in formats:
            p = out / "summary.json"
            p.write_text(json.dumps(_json_ready(summary_dict(report)), indent=2, sort_keys=True) + "\n")
            written.append(p)
    except OSError as exc:
        raise ConfigError(f"cannot write report to {out}: {exc}") from None
    return written


# --- entry point -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not the "infeasible" exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="carbon-ems", description=__doc__.split("\n\n")[0])
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--scenario", help="scenario manifest (default: built-in synthetic scenario)")
    p.add_argument("--synthetic-days", type=int, help="length of the built-in scenario in days")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--carbon-price", dest="carbon_prices", help="comma-separated $/t levels, e.g. 0,10,20,30")
    p.add_argument("--horizon", help="day-end or rolling:H")
    p.add_argument("--forecaster", choices=FORECASTERS)
    p.add_argument("--weights", help="attention weights manifest (.json)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--strict-paper", action="store_true", default=None,
                   help="forbid battery discharge straight to the load")
    p.add_argument("--carry-soc", action="store_true", default=None,
                   help="carry battery charge across days instead of resetting it")
    p.add_argument("--trace", action="store_true", default=None, help="write branch-and-bound trace.log")
    p.add_argument("-v", "--verbose", dest="verbosity", action="count", default=None)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k != "config"}
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(config.verbosity, 2), format="%(message)s")
    out = Path(config.out)
    trace_file = None
    try:
        out.mkdir(parents=True, exist_ok=True)
        if config.trace:
            trace_file = open(out / "trace.log", "w")
        report = run_sweep(config, trace=trace_file, out=out)
        report.meta = config.to_dict()
        emit_report(report, out)
    except (ConfigError, MissingSeries, InsufficientHistory) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (Infeasible, InfeasibleBoundary, InfeasibleHorizon) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (NumericalBreakdown, NodeLimitExceeded, DivergedLoss, ForecastFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CaemsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    finally:
        if trace_file is not None:
            trace_file.close()
    if report.pareto_violations:
        for msg in report.pareto_violations:
            print(f"pareto check failed: {msg}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {len(report.rows)} rows to {out / 'frontier.csv'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
