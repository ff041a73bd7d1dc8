"""Encoder-only attention forecaster trained with plain SGD.

Inputs are per-channel standardized with training-split statistics. The
network embeds each input row linearly, adds sinusoidal position codes,
runs ``n_layers`` post-norm encoder blocks (multi-head self-attention then
a ReLU feed-forward, each followed by residual add and layer norm) and maps
the flattened ``lookback x d_model`` representation to ``horizon x C``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import DivergedLoss, EmptyDataset, ShapeMismatch
from ..market_data import RT_CHANNELS, ForecastWindow, ScenarioData
from .autodiff import Tensor, parameter
from .base import Forecaster

LN_EPS = 1e-12
WEIGHTS_FORMAT = "carbon-ems-attention"
WEIGHTS_VERSION = 1


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    if length < 1 or d_model < 2 or d_model % 2:
        raise ValueError("length >= 1 and an even d_model >= 2 required")
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i / d_model)
    pe = np.empty((length, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_weights(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    return softmax(Q @ np.swapaxes(K, -1, -2) / math.sqrt(Q.shape[-1]))


def scaled_dot_attention(Q, K, V) -> np.ndarray:
    """``softmax(Q K^T / sqrt(d_k)) V`` for (batched) matrices."""
    Q, K, V = (np.asarray(a, dtype=float) for a in (Q, K, V))
    if Q.shape[-1] != K.shape[-1] or K.shape[-2] != V.shape[-2]:
        raise ShapeMismatch(f"Q{Q.shape} K{K.shape} V{V.shape}")
    return attention_weights(Q, K) @ V


def layer_norm(x: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    """Row standardization over the last axis, before scale and offset."""
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


@dataclass
class AttentionModelParams:
    lookback: int
    horizon: int
    channels: tuple[str, ...]
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    train_losses: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        self.channels = tuple(self.channels)
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for sinusoidal encodings")
        c = len(self.channels)
        if self.norm_mean is None:
            self.norm_mean = np.zeros(c)
        if self.norm_std is None:
            self.norm_std = np.ones(c)
        self.norm_mean = np.asarray(self.norm_mean, float)
        self.norm_std = np.asarray(self.norm_std, float)

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, f, c = self.d_model, self.d_ff, self.n_channels
        out = {"in_w": (c, d), "in_b": (d,)}
        for l in range(self.n_layers):
            out.update({
                f"l{l}.wq": (d, d), f"l{l}.wk": (d, d), f"l{l}.wv": (d, d),
                f"l{l}.wo": (d, d), f"l{l}.bo": (d,),
                f"l{l}.ln1_g": (d,), f"l{l}.ln1_b": (d,),
                f"l{l}.w1": (d, f), f"l{l}.b1": (f,), f"l{l}.w2": (f, d), f"l{l}.b2": (d,),
                f"l{l}.ln2_g": (d,), f"l{l}.ln2_b": (d,),
            })
        out["head_w"] = (self.lookback * d, self.horizon * c)
        out["head_b"] = (self.horizon * c,)
        return out

    def copy(self) -> "AttentionModelParams":
        return AttentionModelParams(
            self.lookback, self.horizon, self.channels, self.d_model, self.n_heads, self.n_layers, self.d_ff,
            {k: v.copy() for k, v in self.weights.items()}, self.norm_mean.copy(), self.norm_std.copy(),
            list(self.train_losses),
        )

    def validate(self) -> None:
        for name, shape in self.shapes().items():
            if name not in self.weights:
                raise ShapeMismatch(f"missing weight {name}")
            if self.weights[name].shape != shape:
                raise ShapeMismatch(f"{name}: {self.weights[name].shape} != {shape}")
            if not np.all(np.isfinite(self.weights[name])):
                raise ValueError(f"{name} contains non-finite values")

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.norm_mean) / self.norm_std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.norm_std + self.norm_mean


def init_params(
    lookback: int,
    horizon: int,
    channels: Sequence[str] = RT_CHANNELS,
    d_model: int = 32,
    n_heads: int = 4,
    n_layers: int = 2,
    d_ff: int = 64,
    seed: int = 0,
) -> AttentionModelParams:
    params = AttentionModelParams(lookback, horizon, tuple(channels), d_model, n_heads, n_layers, d_ff)
    rng = np.random.default_rng(seed)
    for name, shape in params.shapes().items():
        leaf = name.split(".")[-1]
        if leaf.startswith("ln") and leaf.endswith("_g"):
            w = np.ones(shape)
        elif len(shape) == 1:
            w = np.zeros(shape)
        else:
            fan_in, fan_out = shape
            w = rng.normal(0.0, math.sqrt(2.0 / (fan_in + fan_out)), size=shape)
        params.weights[name] = w
    return params


def _network(x: Tensor, params: AttentionModelParams, W: dict[str, Tensor]) -> Tensor:
    B, tau, _ = x.shape
    d, h = params.d_model, params.n_heads
    dk = d // h
    pe = positional_encoding(tau, d)
    z = x @ W["in_w"] + W["in_b"] + pe
    for l in range(params.n_layers):
        p = f"l{l}."

        def heads(t: Tensor) -> Tensor:
            return t.reshape(B, tau, h, dk).transpose(0, 2, 1, 3)

        q, k, v = heads(z @ W[p + "wq"]), heads(z @ W[p + "wk"]), heads(z @ W[p + "wv"])
        att = ((q @ k.swap_last()) * (1.0 / math.sqrt(dk))).softmax()
        o = (att @ v).transpose(0, 2, 1, 3).reshape(B, tau, d) @ W[p + "wo"] + W[p + "bo"]
        z = (z + o).normalize(LN_EPS) * W[p + "ln1_g"] + W[p + "ln1_b"]
        f = (z @ W[p + "w1"] + W[p + "b1"]).relu() @ W[p + "w2"] + W[p + "b2"]
        z = (z + f).normalize(LN_EPS) * W[p + "ln2_g"] + W[p + "ln2_b"]
    out = z.reshape(B, tau * d) @ W["head_w"] + W["head_b"]
    return out.reshape(B, params.horizon, params.n_channels)


def forward(window, params: AttentionModelParams) -> np.ndarray:
    """Forecast in standardized units.

    ``window`` is a ForecastWindow or array of shape ``(lookback, C)`` or
    ``(batch, lookback, C)``, already standardized.
    """
    x = window.history if isinstance(window, ForecastWindow) else np.asarray(window, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (params.lookback, params.n_channels):
        raise ShapeMismatch(f"input {x.shape} does not match ({params.lookback}, {params.n_channels})")
    W = {k: Tensor(v) for k, v in params.weights.items()}
    y = _network(Tensor(x), params, W).data
    return y[0] if single else y


def loss_and_grads(params: AttentionModelParams, X: np.ndarray, Y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared error over a batch and its gradient for every weight."""
    W = {k: parameter(v) for k, v in params.weights.items()}
    pred = _network(Tensor(X), params, W)
    loss = (pred - Y).square().mean()
    loss.backward()
    grads = {k: (w.grad if w.grad is not None else np.zeros_like(w.data)) for k, w in W.items()}
    return float(loss.data), grads


def loss_value(params: AttentionModelParams, X: np.ndarray, Y: np.ndarray) -> float:
    return float(np.mean((forward(X, params) - Y) ** 2))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 60
    batch_size: int = 16
    seed: int = 0
    validation_split: float = 0.2

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("learning_rate >= 0, epochs >= 1 and batch_size >= 1 required")
        if not 0 < self.validation_split < 1:
            raise ValueError("validation_split must lie in (0, 1)")


def rolling_windows(data: np.ndarray, lookback: int, horizon: int, stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """All ``(history, target)`` pairs from a ``T x C`` matrix."""
    data = np.asarray(data, dtype=float)
    starts = range(lookback, data.shape[0] - horizon + 1, stride)
    X = np.array([data[t - lookback:t] for t in starts]).reshape(-1, lookback, data.shape[1])
    Y = np.array([data[t:t + horizon] for t in starts]).reshape(-1, horizon, data.shape[1])
    return X, Y


def split_dataset(X: np.ndarray, Y: np.ndarray, validation_split: float):
    """Chronological split: the last fraction of windows is held out."""
    n_val = int(round(len(X) * validation_split))
    n_train = len(X) - n_val
    return (X[:n_train], Y[:n_train]), (X[n_train:], Y[n_train:])


def train(
    X: np.ndarray,
    Y: np.ndarray,
    config: TrainConfig = TrainConfig(),
    channels: Sequence[str] = RT_CHANNELS,
    d_model: int = 32,
    n_heads: int = 4,
    n_layers: int = 2,
    d_ff: int = 64,
) -> AttentionModelParams:
    """Fit the model on raw-unit windows ``X`` (N, lookback, C) -> ``Y`` (N, horizon, C)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 3 or Y.ndim != 3 or len(X) != len(Y):
        raise ShapeMismatch(f"X{X.shape} / Y{Y.shape}")
    (Xtr, Ytr), _ = split_dataset(X, Y, config.validation_split)
    if len(Xtr) < 1:
        raise EmptyDataset("no training windows after the validation split")

    rows = Xtr.reshape(-1, X.shape[2])
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    std = np.where(std > 1e-8, std, 1.0)

    params = init_params(X.shape[1], Y.shape[1], channels, d_model, n_heads, n_layers, d_ff, seed=config.seed)
    params.norm_mean, params.norm_std = mean, std
    Xn, Yn = params.normalize(Xtr), params.normalize(Ytr)

    rng = np.random.default_rng(config.seed + 1)
    for epoch in range(config.epochs):
        perm = rng.permutation(len(Xn))
        total = 0.0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start:start + config.batch_size]
            loss, grads = loss_and_grads(params, Xn[idx], Yn[idx])
            if not math.isfinite(loss):
                raise DivergedLoss(f"non-finite loss in epoch {epoch}")
            total += loss * len(idx)
            if config.learning_rate:
                for k, g in grads.items():
                    params.weights[k] = params.weights[k] - config.learning_rate * g
        params.train_losses.append(total / len(Xn))
    return params


def validation_rmse(params: AttentionModelParams, X: np.ndarray, Y: np.ndarray) -> float:
    """RMSE in standardized units over every forecast entry."""
    pred = forward(params.normalize(X), params)
    return float(np.sqrt(np.mean((pred - params.normalize(Y)) ** 2)))


class AttentionForecaster(Forecaster):
    def __init__(self, params: AttentionModelParams):
        super().__init__(params.lookback, params.horizon, params.channels)
        params.validate()
        self.params = params

    def predict(self, window: ForecastWindow) -> np.ndarray:
        hist = window.history if isinstance(window, ForecastWindow) else np.asarray(window, float)
        return self.params.denormalize(forward(self.params.normalize(hist), self.params))

    @classmethod
    def fit(cls, scenario: ScenarioData, config: TrainConfig = TrainConfig(), lookback: int = 24,
            horizon: int = 24, channels: Sequence[str] = RT_CHANNELS, **arch) -> "AttentionForecaster":
        X, Y = rolling_windows(scenario.matrix(channels), lookback, horizon)
        return cls(train(X, Y, config, channels, **arch))


# --- weight archive ---------------------------------------------------------
#
# <path>.json  manifest (format, version, architecture, channels,
#              normalization, tensor table with name/shape/offset/count)
# <path>.bin   tensors concatenated in table order, float64 little-endian,
#              C order; offset is in bytes from the start of the file

def save_params(params: AttentionModelParams, path: str | Path) -> tuple[Path, Path]:
    path = Path(path)
    manifest_path, blob_path = path.with_suffix(".json"), path.with_suffix(".bin")
    table, chunks, offset = [], [], 0
    for name in params.shapes():
        arr = np.ascontiguousarray(params.weights[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes(order="C"))
        offset += arr.nbytes
    manifest = {
        "format": WEIGHTS_FORMAT,
        "version": WEIGHTS_VERSION,
        "dtype": "<f8",
        "lookback": params.lookback,
        "horizon": params.horizon,
        "channels": list(params.channels),
        "d_model": params.d_model,
        "n_heads": params.n_heads,
        "n_layers": params.n_layers,
        "d_ff": params.d_ff,
        "norm_mean": [float(v) for v in params.norm_mean],
        "norm_std": [float(v) for v in params.norm_std],
        "blob": blob_path.name,
        "tensors": table,
    }
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest_path, blob_path


def load_params(path: str | Path) -> AttentionModelParams:
    path = Path(path)
    manifest_path = path if path.suffix == ".json" else path.with_suffix(".json")
    m = json.loads(manifest_path.read_text())
    if m.get("format") != WEIGHTS_FORMAT or m.get("version") != WEIGHTS_VERSION:
        raise ValueError(f"{manifest_path}: not a {WEIGHTS_FORMAT} v{WEIGHTS_VERSION} manifest")
    blob = (manifest_path.parent / m["blob"]).read_bytes()
    weights = {}
    for entry in m["tensors"]:
        arr = np.frombuffer(blob, dtype="<f8", count=entry["count"], offset=entry["offset"])
        weights[entry["name"]] = arr.reshape(entry["shape"]).astype(float)
    params = AttentionModelParams(
        m["lookback"], m["horizon"], tuple(m["channels"]), m["d_model"], m["n_heads"], m["n_layers"], m["d_ff"],
        weights, np.array(m["norm_mean"]), np.array(m["norm_std"]),
    )
    params.validate()
    return params
