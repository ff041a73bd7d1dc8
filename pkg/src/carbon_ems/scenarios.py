"""Seeded synthetic scenarios with anti-correlated price and carbon peaks.

The market series the method was evaluated on are not distributed, so the
package ships a generator: prices peak in the afternoon while marginal carbon
intensity peaks in the early morning and is lowest when prices are high.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .market_data import ScenarioData, write_manifest
from .model import DeviceParams

DEFAULT_START = datetime(2024, 7, 1, tzinfo=timezone.utc)


def default_device_params(carbon_price: float = 0.0) -> DeviceParams:
    """Battery of 6 MWh / 2 MW plus up to 2 MWh of deferrable demand."""
    return DeviceParams(soc_min=0.0, soc_max=6.0, soc_init=0.0, rate_max=2.0,
                        shift_max=2.0, shift_init=0.0, carbon_price=carbon_price)


def _bump(hours: np.ndarray, center: float, width: float) -> np.ndarray:
    # smooth daily peak, periodic in 24 h
    dist = np.minimum(np.abs(hours - center), 24 - np.abs(hours - center))
    return np.exp(-0.5 * (dist / width) ** 2)


@dataclass(frozen=True)
class SyntheticConfig:
    days: int = 10
    seed: int = 0
    price_base: float = 30.0
    price_peak: float = 40.0
    price_peak_hour: float = 14.0
    carbon_base: float = 0.35
    carbon_peak: float = 0.45
    carbon_peak_hour: float = 6.0
    carbon_dip: float = 0.15
    demand_base: float = 1.5
    demand_peak: float = 0.8
    price_noise: float = 0.05
    carbon_noise: float = 0.03
    rt_noise: float = 0.06


def synthetic_scenario(config: SyntheticConfig = SyntheticConfig(), start: datetime = DEFAULT_START) -> ScenarioData:
    """Daily-seasonal prices, intensities and demand with multiplicative noise."""
    rng = np.random.default_rng(config.seed)
    T = 24 * config.days
    h = np.arange(T) % 24
    price_shape = config.price_base + config.price_peak * _bump(h, config.price_peak_hour, 2.5)
    # carbon is high in the morning and dips when prices peak
    carbon_shape = (config.carbon_base + config.carbon_peak * _bump(h, config.carbon_peak_hour, 2.0)
                    - config.carbon_dip * _bump(h, config.price_peak_hour, 3.0))
    demand = config.demand_base + config.demand_peak * _bump(h, 18.0, 3.0)

    day_level = np.repeat(1.0 + 0.05 * rng.standard_normal(config.days), 24)
    da_price = price_shape * day_level * (1.0 + config.price_noise * rng.standard_normal(T))
    rt_price = da_price * (1.0 + config.rt_noise * rng.standard_normal(T))
    da_carbon = carbon_shape * (1.0 + config.carbon_noise * rng.standard_normal(T))
    rt_carbon = da_carbon * (1.0 + config.rt_noise * rng.standard_normal(T))
    demand = demand * (1.0 + 0.03 * rng.standard_normal(T))
    return ScenarioData(
        start=start,
        da_price=np.round(da_price, 4),
        rt_price=np.round(rt_price, 4),
        da_carbon=np.round(np.clip(da_carbon, 0.0, None), 5),
        rt_carbon=np.round(np.clip(rt_carbon, 0.0, None), 5),
        demand=np.round(np.clip(demand, 0.0, None), 4),
    )


# Hours of the constructed day's two peaks.
CARBON_PEAK_HOURS = (5, 6, 7, 8)
PRICE_PEAK_HOURS = (13, 14, 15, 16)


def two_peak_day(start: datetime = DEFAULT_START) -> ScenarioData:
    """One hand-built day: a morning carbon peak and an afternoon price peak.

    Off-peak energy is slightly cheaper during the carbon peak, so a
    cost-only dispatch charges exactly when the grid is dirtiest.
    """
    h = np.arange(24)
    price = np.full(24, 30.0)
    price[list(CARBON_PEAK_HOURS)] = 28.0
    price[list(PRICE_PEAK_HOURS)] = 80.0
    carbon = np.full(24, 0.35)
    carbon[list(CARBON_PEAK_HOURS)] = 0.9
    carbon[list(PRICE_PEAK_HOURS)] = 0.25
    demand = 1.5 + 0.2 * np.cos(2 * np.pi * (h - 18) / 24)
    return ScenarioData(start=start, da_price=price, rt_price=price.copy(), da_carbon=carbon,
                        rt_carbon=carbon.copy(), demand=np.round(demand, 6))


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write the synthetic scenario as a manifest directory.")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--days", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--two-peak", action="store_true", help="write the constructed single day instead")
    args = parser.parse_args(argv)
    scenario = two_peak_day() if args.two_peak else synthetic_scenario(SyntheticConfig(days=args.days, seed=args.seed))
    path = write_manifest(Path(args.out), scenario)
    print(path)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
