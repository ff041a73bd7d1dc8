from __future__ import annotations

import json

import numpy as np
import pytest

from carbon_ems.cli import (
    EXIT_CONFIG, EXIT_INFEASIBLE, RunConfig, SweepReport, check_pareto, emit_report, load_config, main,
    parse_carbon_prices, parse_horizon, run_baseline, run_sweep, FrontierRow,
)
from carbon_ems.errors import ConfigError
from carbon_ems.market_data import write_manifest
from carbon_ems.model import DeviceParams
from carbon_ems.scenarios import SyntheticConfig, synthetic_scenario, two_peak_day

from conftest import make_scenario


class TestRunBaseline:
    def test_committed_demand_settles_in_da(self):
        sc = make_scenario(da_price=[20, 30, 40], rt_price=[90, 1, 5], demand=[1, 2, 3])
        assert run_baseline(sc, DeviceParams()).energy_cost == pytest.approx(20 + 60 + 120)

    def test_zero_baseline_pure_rt(self):
        sc = make_scenario(da_price=[20, 30], rt_price=[90, 1], demand=[1, 2], baseline=[0, 0])
        assert run_baseline(sc, DeviceParams()).energy_cost == pytest.approx(92)

    def test_zero_demand(self):
        sc = make_scenario(demand=[0, 0], baseline=[0, 0])
        rep = run_baseline(sc, DeviceParams(carbon_price=30))
        assert rep.total == 0 and rep.emissions == 0


def test_parsers():
    assert parse_carbon_prices("0, 10,20,30") == (0, 10, 20, 30)
    assert parse_horizon("rolling:6") == 6
    assert parse_horizon("day-end") == "day-end"
    for bad in ("", "-1", "x"):
        with pytest.raises(ConfigError):
            parse_carbon_prices(bad)
    with pytest.raises(ConfigError):
        parse_horizon("rolling:0")


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig(mode="mpc")
    with pytest.raises(ConfigError):
        RunConfig(carbon_prices=())
    cfg = tmp_path / "run.yaml"
    cfg.write_text("mode: perfect\ncarbon_prices: [0, 30]\ndevice: {rate_max: 0.5}\nscenario: data/manifest.yaml\n")
    rc = load_config(cfg)
    assert rc.carbon_prices == (0.0, 30.0)
    assert rc.device.rate_max == 0.5 and rc.device.soc_max == 6.0
    assert rc.scenario == str(tmp_path / "data" / "manifest.yaml")
    cfg.write_text("colour: blue\n")
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_sweep_row_count_and_pareto():
    rc = RunConfig(synthetic_days=3, carbon_prices=(0, 10, 20, 30))
    rep = run_sweep(rc)
    assert len(rep.rows) == 12
    assert rep.pareto_violations == []
    for day in range(3):
        rows = sorted((r for r in rep.rows if r.day == day), key=lambda r: r.carbon_price)
        costs = [r.energy_cost for r in rows]
        assert costs[0] == pytest.approx(min(costs))


def test_baseline_mode_reduces_to_run_baseline():
    sc = synthetic_scenario(SyntheticConfig(days=2))
    rep = run_sweep(RunConfig(mode="baseline", carbon_prices=(10,)), scenario=sc)
    for r in rep.rows:
        day = sc.slice(24 * r.day, 24 * r.day + 24)
        assert r.total == pytest.approx(run_baseline(day, DeviceParams(carbon_price=10)).total)


def test_zero_flexibility_every_mode_matches_baseline():
    sc = synthetic_scenario(SyntheticConfig(days=2))
    dev = DeviceParams()
    base = run_sweep(RunConfig(mode="baseline", carbon_prices=(0, 30), device=dev), scenario=sc)
    for cfg in (RunConfig(mode="perfect", carbon_prices=(0, 30), device=dev),
                RunConfig(mode="perfect", horizon="rolling:5", carbon_prices=(0, 30), device=dev),
                RunConfig(mode="mpc", forecaster="persistence", carbon_prices=(0, 30), device=dev)):
        rep = run_sweep(cfg, scenario=sc)
        for r in rep.rows:
            ref = next(b for b in base.rows if (b.day, b.carbon_price) == (r.day, r.carbon_price))
            assert r.total == pytest.approx(ref.total, rel=1e-12)


def test_check_pareto_flags_violations():
    rows = [FrontierRow(0, "d", 0, 10.0, 0, 10.0, 5.0), FrontierRow(0, "d", 10, 9.0, 60, 69.0, 6.0)]
    msgs = check_pareto(rows)
    assert len(msgs) == 2


def test_empty_report_writes_headers(tmp_path):
    emit_report(SweepReport("perfect", (0.0,)), tmp_path)
    assert (tmp_path / "frontier.csv").read_text() == "day,date,carbon_price,energy_cost,carbon_cost,total,emissions\n"
    assert json.loads((tmp_path / "summary.json").read_text())["rows"] == 0


def test_cli_outputs_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["--synthetic-days", "2", "--carbon-price", "0,30", "--seed", "3"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["00_0_plan.csv", "00_30_plan.csv", "01_0_plan.csv", "01_30_plan.csv", "frontier.csv", "summary.json"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()
    lines = (a / "frontier.csv").read_text().splitlines()
    assert len(lines) == 5
    # six significant digits
    for cell in lines[1].split(",")[3:]:
        assert len(cell.replace("-", "").replace(".", "").lstrip("0")) <= 6


def test_cli_manifest_and_mpc(tmp_path):
    data = tmp_path / "data"
    write_manifest(data, synthetic_scenario(SyntheticConfig(days=2)))
    out = tmp_path / "out"
    code = main(["--scenario", str(data / "manifest.yaml"), "--mode", "mpc", "--forecaster", "seasonal24",
                 "--horizon", "rolling:4", "--carbon-price", "30", "--out", str(out)])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["warmup_days"] == [0]
    assert summary["days_solved"] == [1]
    assert "perfect_foresight_totals" in summary
    assert (out / "01_30_steps.csv").exists()


def test_cli_exit_codes(tmp_path):
    assert main(["--mode", "mpc", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["--carbon-price", "abc", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["--scenario", str(tmp_path / "missing.yaml"), "--out", str(tmp_path)]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        main(["--no-such-flag"])
    assert info.value.code == EXIT_CONFIG
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("device: {soc_init: 99}\n")
    assert main(["--config", str(cfg), "--out", str(tmp_path)]) == EXIT_INFEASIBLE


def test_cli_trace(tmp_path):
    assert main(["--synthetic-days", "1", "--carbon-price", "0", "--trace", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "trace.log").read_text().startswith("node=1")


def test_cost_only_vs_carbon_aware_two_peak():
    day = two_peak_day()
    rep = run_sweep(RunConfig(carbon_prices=(0, 30)), scenario=day)
    g0, g30 = rep.plans[(0, 0.0)].g, rep.plans[(0, 30.0)].g
    assert g30[5:9].sum() < g0[5:9].sum()
    assert np.all(g0[13:17] < day.demand[13:17]) and np.all(g30[13:17] < day.demand[13:17])
