"""Reference forecasters and the RMSE metric."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import InsufficientHistory, ShapeMismatch
from ..market_data import RT_CHANNELS, ForecastWindow
from .base import Forecaster

KINDS = ("persistence", "seasonal24", "linear_ar")


def rmse(pred, actual) -> float:
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise ShapeMismatch(f"{pred.shape} vs {actual.shape}")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


def fit_ar(series, order: int = 1) -> np.ndarray:
    """Least-squares AR fit with intercept.

    Returns ``[intercept, a_1, ..., a_order]`` for
    ``x[t] = intercept + a_1 x[t-1] + ... + a_order x[t-order]``.
    """
    x = np.asarray(series, dtype=float)
    if len(x) <= order:
        raise InsufficientHistory(f"need more than {order} points for AR({order})")
    rows = len(x) - order
    design = np.ones((rows, order + 1))
    for k in range(1, order + 1):
        design[:, k] = x[order - k:len(x) - k]
    coef, *_ = np.linalg.lstsq(design, x[order:], rcond=None)
    return coef


def _ar_rollout(history: np.ndarray, coef: np.ndarray, horizon: int) -> np.ndarray:
    order = len(coef) - 1
    buf = list(history[-order:]) if order else []
    out = np.empty(horizon)
    for h in range(horizon):
        val = coef[0] + sum(coef[k] * buf[-k] for k in range(1, order + 1))
        out[h] = val
        buf.append(val)
    return out


def predict_baseline(window: ForecastWindow | np.ndarray, kind: str, horizon: int = 24, order: int = 1) -> np.ndarray:
    hist = window.history if isinstance(window, ForecastWindow) else np.atleast_2d(np.asarray(window, float))
    tau, n_ch = hist.shape
    if kind == "persistence":
        return np.repeat(hist[-1:], horizon, axis=0)
    if kind == "seasonal24":
        if tau < 24:
            raise InsufficientHistory(f"seasonal24 needs 24 rows, got {tau}")
        block = hist[-24:]
        return block[np.arange(horizon) % 24]
    if kind == "linear_ar":
        out = np.empty((horizon, n_ch))
        for c in range(n_ch):
            out[:, c] = _ar_rollout(hist[:, c], fit_ar(hist[:, c], order), horizon)
        return out
    raise ValueError(f"unknown baseline kind {kind!r}; expected one of {KINDS}")


class BaselineForecaster(Forecaster):
    def __init__(self, kind: str, lookback: int = 24, horizon: int = 24,
                 channels: Sequence[str] = RT_CHANNELS, order: int = 1):
        if kind not in KINDS:
            raise ValueError(f"unknown baseline kind {kind!r}")
        if kind == "seasonal24" and lookback < 24:
            raise InsufficientHistory("seasonal24 needs lookback >= 24")
        super().__init__(lookback, horizon, channels)
        self.kind = kind
        self.order = order

    def predict(self, window: ForecastWindow) -> np.ndarray:
        return predict_baseline(window, self.kind, self.horizon, self.order)
