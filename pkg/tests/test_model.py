from __future__ import annotations

import json

import numpy as np
import pytest

from carbon_ems.errors import InfeasibleBoundary, LengthMismatch
from carbon_ems.model import (
    DeviceParams, DispatchPlan, VariableLayout, baseline_plan, build_dispatch_problem, carbon_cost,
    emissions, energy_cost, settle, validate_plan,
)
from carbon_ems.solver import solve_milp

from conftest import make_scenario, random_instance


def plan_with_g(g, soc0=0.0):
    g = np.asarray(g, dtype=float)
    z = np.zeros(len(g))
    return DispatchPlan(g=g, g_d=g.copy(), g_b=z, b_g=z, b_d=z, b_net=z, u_ch=z, u_dis=z,
                        soc=np.full(len(g) + 1, soc0), shift=np.zeros(len(g) + 1))


class TestSettlement:
    def setup_method(self):
        self.sc = make_scenario(da_price=[20, 30], rt_price=[25, 10], baseline=[1, 1], demand=[1, 1],
                                da_carbon=[0.4, 0.5], rt_carbon=[0.45, 0.35])
        self.plan = plan_with_g([1.5, 0.5])

    def test_energy_cost(self):
        assert energy_cost(self.plan, self.sc) == pytest.approx(57.5, abs=1e-12)

    def test_carbon_cost(self):
        assert carbon_cost(self.plan, self.sc, 30) == pytest.approx(28.5, abs=1e-12)

    def test_emissions(self):
        assert emissions(self.plan, self.sc) == pytest.approx(0.95, abs=1e-12)

    def test_zero_deviation(self):
        plan = plan_with_g([1, 1])
        assert energy_cost(plan, self.sc) == pytest.approx(50.0)
        assert carbon_cost(plan, self.sc, 30) == pytest.approx(30 * 0.9)

    def test_zero_baseline(self):
        sc = make_scenario(da_price=[20, 30], rt_price=[25, 10], baseline=[0, 0])
        assert energy_cost(plan_with_g([2, 3]), sc) == pytest.approx(80.0)

    def test_zero_carbon_price(self):
        assert carbon_cost(self.plan, self.sc, 0) == 0

    def test_zero_intensity(self):
        sc = make_scenario(2, da_carbon=[0, 0], rt_carbon=[0, 0])
        assert emissions(self.plan, sc) == 0

    def test_negative_emission_hour_flagged(self):
        sc = make_scenario(baseline=[1], demand=[1], da_carbon=[0.2], rt_carbon=[0.5])
        rep = settle(plan_with_g([0.0]), sc, 10)
        assert rep.emissions == pytest.approx(-0.3)
        assert rep.negative_emission_hours == [0]
        assert rep.negative_emissions

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            energy_cost(plan_with_g([1, 1, 1]), self.sc)

    def test_report_identities(self, rng):
        for _ in range(20):
            sc, p = random_instance(rng, 5)
            plan = plan_with_g(rng.uniform(-1, 3, 5))
            rep = settle(plan, sc, p.carbon_price)
            assert rep.total == rep.energy_cost + rep.carbon_cost
            assert rep.carbon_cost == pytest.approx(p.carbon_price * rep.emissions, rel=1e-12, abs=1e-12)

    def test_report_json(self):
        rep = settle(self.plan, self.sc, 30)
        d = json.loads(rep.to_json())
        assert d["energy_cost"] == pytest.approx(57.5)
        assert len(d["per_hour"]["emissions"]) == 2


class TestDeviceParams:
    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            DeviceParams(rate_max=-1)

    def test_boundary_checks(self):
        with pytest.raises(InfeasibleBoundary):
            DeviceParams(soc_max=1, soc_init=2).check_boundary()
        with pytest.raises(InfeasibleBoundary):
            DeviceParams(shift_max=0.5, shift_init=1).check_boundary()

    def test_build_rejects_bad_boundary(self):
        with pytest.raises(InfeasibleBoundary):
            build_dispatch_problem(make_scenario(3), DeviceParams(shift_max=0.5, shift_init=1))


class TestBuild:
    def test_counts(self):
        prob = build_dispatch_problem(make_scenario(24), DeviceParams(0, 4, 1, 1, 1, 0, 10))
        assert prob.n_vars == 10 * 24 + 2
        assert len(prob.integrality) == 48
        assert VariableLayout(24).n_vars == prob.n_vars
        ints = {k[0] for k, v in prob.var_index.items() if v in set(prob.integrality)}
        assert ints == {"u_ch", "u_dis"}
        assert prob.A_eq.shape[1] == prob.A_ub.shape[1] == prob.n_vars

    def test_rows_reference_valid_indices(self):
        prob = build_dispatch_problem(make_scenario(5), DeviceParams(0, 4, 1, 1, 1, 0, 10))
        assert len(prob.eq_names) == prob.A_eq.shape[0]
        assert len(prob.ub_names) == prob.A_ub.shape[0]
        assert sorted(prob.var_index.values()) == list(range(prob.n_vars))

    def test_zero_shift_bounds_collapse(self):
        prob = build_dispatch_problem(make_scenario(4), DeviceParams(0, 4, 1, 1, 0, 0, 0))
        blk = prob.layout.block("shift")
        assert np.all(prob.lower[blk] == 0) and np.all(prob.upper[blk] == 0)

    def test_dead_battery(self):
        sc = make_scenario(demand=[1, 2, 1.5])
        p = DeviceParams(0, 4, 1, 0, 1, 0, 0)
        prob = build_dispatch_problem(sc, p)
        for name in ("g_b", "b_g", "b_d"):
            assert np.all(prob.upper[prob.layout.block(name)] == 0)
        plan, _ = solve_milp(prob)
        assert np.allclose(plan.g, plan.g_d)
        assert np.allclose(plan.g, sc.demand - np.diff(plan.shift))

    def test_objective_matches_settlement(self, rng):
        for _ in range(10):
            sc, p = random_instance(rng, 4)
            prob = build_dispatch_problem(sc, p)
            plan, _ = solve_milp(prob)
            assert prob.objective(plan.to_vector()) == pytest.approx(settle(plan, sc, p.carbon_price).total, rel=1e-9)

    def test_offset_does_not_change_argmin(self, rng):
        for _ in range(10):
            sc, p = random_instance(rng, 4)
            a, _ = solve_milp(build_dispatch_problem(sc, p))
            b, _ = solve_milp(build_dispatch_problem(sc, p, include_offset=False))
            assert np.allclose(a.to_vector(), b.to_vector(), atol=1e-7)

    def test_direct_discharge_can_be_disabled(self):
        prob = build_dispatch_problem(make_scenario(3), DeviceParams(0, 4, 1, 1, 1, 0, 0), strict_paper=True)
        assert np.all(prob.upper[prob.layout.block("b_d")] == 0)


class TestPlanIO:
    def test_csv_round_trip(self, rng):
        sc, p = random_instance(rng, 5)
        plan, _ = solve_milp(build_dispatch_problem(sc, p))
        back = DispatchPlan.from_csv(plan.to_csv(fmt="{!r}"))
        assert np.array_equal(back.to_vector(), plan.to_vector())

    def test_csv_header(self):
        text = plan_with_g([1.0]).to_csv()
        assert text.splitlines()[0] == ",".join(DispatchPlan.CSV_COLUMNS)


# --- validation -------------------------------------------------------------

def feasible_plan(rng, sc, p):
    """Constructive random feasible plan: random modes and powers, then chains."""
    T = sc.steps
    a = p.rate_max
    fields = {n: np.zeros(T) for n in ("g", "g_d", "g_b", "b_g", "b_d", "b_net", "u_ch", "u_dis")}
    soc = [p.soc_init]
    for t in range(T):
        mode = rng.integers(3)
        if mode == 0:
            room = min(a, p.soc_max - soc[-1])
            fields["u_ch"][t] = 1
            fields["g_b"][t] = rng.uniform(0, room)
        elif mode == 1:
            room = min(a, soc[-1] - p.soc_min)
            fields["u_dis"][t] = 1
            total = rng.uniform(0, room)
            share = rng.uniform()
            fields["b_d"][t] = min(total * share, sc.demand[t])
            fields["b_g"][t] = total - fields["b_d"][t]
        fields["b_net"][t] = fields["g_b"][t] - fields["b_g"][t] - fields["b_d"][t]
        soc.append(soc[-1] + fields["b_net"][t])
    shift = np.zeros(T + 1)
    shift[0] = p.shift_init
    for t in range(1, T):
        shift[t] = rng.uniform(0, p.shift_max)
    for t in range(T):
        fields["g_d"][t] = sc.demand[t] - fields["b_d"][t] - (shift[t + 1] - shift[t])
    # keep g_d nonnegative by pulling deferral back where needed
    fields["g_d"] = np.maximum(fields["g_d"], 0)
    for t in range(T):
        shift[t + 1] = shift[t] + sc.demand[t] - fields["g_d"][t] - fields["b_d"][t]
    if abs(shift[T]) > 1e-12 or np.any(shift > p.shift_max) or np.any(shift < 0):
        return None
    fields["g"] = fields["g_d"] + fields["g_b"] - fields["b_g"]
    return DispatchPlan(soc=np.array(soc), shift=shift, **fields)


def test_constructed_feasible_plans_pass_and_perturbations_are_named(rng):
    checked = 0
    while checked < 40:
        sc, p = random_instance(rng, 4)
        plan = feasible_plan(rng, sc, p)
        if plan is None:
            continue
        checked += 1
        assert validate_plan(plan, sc, p) == []

        # each perturbation must be reported under the constraint it breaks
        bad = plan.copy(); bad.u_ch[1] = 1; bad.u_dis[1] = 1
        assert "mode-exclusivity" in {v.constraint for v in validate_plan(bad, sc, p)}
        bad = plan.copy(); bad.shift[-1] = 0.5
        assert any(v.constraint == "terminal-shift" and v.hour == sc.steps for v in validate_plan(bad, sc, p))
        bad = plan.copy(); bad.soc[1:] += p.soc_max + 1
        found = {v.constraint for v in validate_plan(bad, sc, p)}
        assert "soc-bounds" in found
        bad = plan.copy(); bad.g[2] += 0.01
        assert {v.constraint for v in validate_plan(bad, sc, p)} == {"net-import"}
        bad = plan.copy(); bad.g_d[0] += 0.01; bad.g[0] += 0.01
        assert {v.constraint for v in validate_plan(bad, sc, p)} == {"balance"}
        bad = plan.copy(); bad.u_ch[0] = 0.5
        assert "binary" in {v.constraint for v in validate_plan(bad, sc, p)}
        bad = plan.copy(); bad.shift[0] += 0.01
        assert "initial-shift" in {v.constraint for v in validate_plan(bad, sc, p)}


def test_validate_reports_rate_limit():
    sc = make_scenario(demand=[1, 1])
    p = DeviceParams(0, 10, 0, 1, 0, 0, 0)
    plan = plan_with_g([1, 1])
    plan.g_b[0] = 2; plan.g[0] = 3; plan.u_ch[0] = 1; plan.b_net[0] = 2
    plan.soc[1:] = 2
    names = {v.constraint for v in validate_plan(plan, sc, p)}
    assert names == {"rate-limit", "charge-mode"}


def test_validate_without_direct_discharge():
    sc = make_scenario(demand=[1])
    p = DeviceParams(0, 2, 1, 1, 0, 0, 0)
    plan = DispatchPlan(g=[0.5], g_d=[0.5], g_b=[0], b_g=[0], b_d=[0.5], b_net=[-0.5], u_ch=[0], u_dis=[1],
                        soc=[1, 0.5], shift=[0, 0])
    assert validate_plan(plan, sc, p) == []
    assert [v.constraint for v in validate_plan(plan, sc, p, strict_paper=True)] == ["no-direct-discharge"]


def test_conservation_properties(rng):
    for _ in range(15):
        sc, p = random_instance(rng, 5)
        plan, _ = solve_milp(build_dispatch_problem(sc, p))
        assert plan.b_net.sum() == pytest.approx(plan.soc[-1] - plan.soc[0], abs=1e-9)
        assert np.diff(plan.shift).sum() == pytest.approx(-p.shift_init, abs=1e-9)


def test_baseline_plan_zero_flexibility():
    sc = make_scenario(demand=[1, 2, 3])
    plan = baseline_plan(sc, DeviceParams(0, 4, 1, 1, 1, 0, 0))
    assert np.array_equal(plan.g, sc.demand)
    assert np.all(plan.b_net == 0) and np.all(plan.shift == 0)
