"""Forecaster interface used by the MPC loop."""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Sequence

import numpy as np

from ..errors import ForecastFailure, InsufficientHistory, ShapeMismatch
from ..market_data import RT_CHANNELS, ForecastWindow, ScenarioData, slice_window


class Forecaster(ABC):
    """Maps a ``lookback x C`` history to a ``horizon x C`` forecast."""

    def __init__(self, lookback: int = 24, horizon: int = 24, channels: Sequence[str] = RT_CHANNELS):
        self.lookback = int(lookback)
        self.horizon = int(horizon)
        self.channels = tuple(channels)

    @abstractmethod
    def predict(self, window: ForecastWindow) -> np.ndarray:
        ...

    def forecast(self, scenario: ScenarioData, t: int, steps: int) -> dict[str, np.ndarray]:
        """Forecast hours ``t .. t + steps - 1`` from the history before ``t``.

        Beyond the model horizon the last forecast row is held.
        """
        try:
            window = slice_window(scenario, t, self.lookback, self.channels)
        except InsufficientHistory as exc:
            raise ForecastFailure(f"hour {t}: {exc}") from exc
        pred = np.asarray(self.predict(window), dtype=float)
        if pred.shape != (self.horizon, len(self.channels)):
            raise ShapeMismatch(f"forecast shape {pred.shape}, expected {(self.horizon, len(self.channels))}")
        if not np.all(np.isfinite(pred)):
            raise ForecastFailure(f"hour {t}: non-finite forecast")
        if steps > self.horizon:
            pred = np.vstack([pred, np.repeat(pred[-1:], steps - self.horizon, axis=0)])
        return {ch: pred[:steps, k].copy() for k, ch in enumerate(self.channels)}


class PerfectForecaster(Forecaster):
    """Returns the realized values: the perfect-foresight reference."""

    def __init__(self, horizon: int = 24, channels: Sequence[str] = RT_CHANNELS):
        super().__init__(lookback=1, horizon=horizon, channels=channels)

    def predict(self, window: ForecastWindow) -> np.ndarray:
        raise NotImplementedError("PerfectForecaster reads the scenario directly; use forecast()")

    def forecast(self, scenario: ScenarioData, t: int, steps: int) -> dict[str, np.ndarray]:
        if t + steps > scenario.steps:
            raise ForecastFailure(f"hours {t}..{t + steps - 1} run past the scenario")
        return {ch: scenario.channel(ch)[t:t + steps].copy() for ch in self.channels}
