"""Forecasters for RT price and carbon intensity."""

from .attention import (
    AttentionForecaster,
    AttentionModelParams,
    TrainConfig,
    forward,
    init_params,
    layer_norm,
    load_params,
    positional_encoding,
    rolling_windows,
    save_params,
    scaled_dot_attention,
    softmax,
    split_dataset,
    train,
    validation_rmse,
)
from .base import Forecaster, PerfectForecaster
from .baselines import KINDS, BaselineForecaster, fit_ar, predict_baseline, rmse

__all__ = [
    "AttentionForecaster", "AttentionModelParams", "BaselineForecaster", "Forecaster", "KINDS",
    "PerfectForecaster", "TrainConfig", "fit_ar", "forward", "init_params", "layer_norm", "load_params",
    "positional_encoding", "predict_baseline", "rmse", "rolling_windows", "save_params",
    "scaled_dot_attention", "softmax", "split_dataset", "train", "validation_rmse",
]
