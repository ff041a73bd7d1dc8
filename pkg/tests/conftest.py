from __future__ import annotations

from datetime import datetime, timezone

import numpy as np
import pytest

from carbon_ems.market_data import ScenarioData
from carbon_ems.model import DeviceParams

START = datetime(2024, 1, 1, tzinfo=timezone.utc)


def make_scenario(T=None, *, da_price=None, rt_price=None, da_carbon=None, rt_carbon=None,
                  demand=None, baseline=None, start=START) -> ScenarioData:
    """Scenario with sensible defaults for any channel left out."""
    given = [v for v in (da_price, rt_price, da_carbon, rt_carbon, demand, baseline) if v is not None]
    T = T if T is not None else len(given[0])

    def arr(v, default):
        return np.full(T, default, dtype=float) if v is None else np.asarray(v, dtype=float)

    return ScenarioData(
        start=start,
        da_price=arr(da_price, 30.0),
        rt_price=arr(rt_price, 30.0),
        da_carbon=arr(da_carbon, 0.4),
        rt_carbon=arr(rt_carbon, 0.4),
        demand=arr(demand, 1.0),
        baseline=None if baseline is None else np.asarray(baseline, dtype=float),
    )


def random_instance(rng: np.random.Generator, T: int) -> tuple[ScenarioData, DeviceParams]:
    """Random prices, intensities, demand and feasible device limits."""
    scenario = ScenarioData(
        START,
        da_price=rng.uniform(10, 100, T),
        rt_price=rng.uniform(-20, 150, T),
        da_carbon=rng.uniform(0.2, 0.8, T),
        rt_carbon=rng.uniform(0.2, 0.8, T),
        demand=rng.uniform(0, 2, T),
        baseline=rng.uniform(0, 2, T),
    )
    soc_max = rng.uniform(0.5, 4)
    shift_max = rng.uniform(0, 2)
    params = DeviceParams(
        soc_min=0.0,
        soc_max=soc_max,
        soc_init=rng.uniform(0, soc_max),
        rate_max=rng.uniform(0.2, 2),
        shift_max=shift_max,
        shift_init=rng.uniform(0, shift_max),
        carbon_price=float(rng.choice([0.0, 10.0, 30.0])),
    )
    return scenario, params


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
