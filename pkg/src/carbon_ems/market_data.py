"""Ingestion, hourly alignment and windowing of market/demand time series.

Series files are two-column CSVs (``timestamp,value``). Timestamps are either
ISO-8601 strings or epoch seconds and are handled as UTC throughout. A
scenario manifest (YAML) maps each channel to a file::

    start: 2024-07-01T00:00:00Z
    steps: 240
    series:
      da_price: da_price.csv
      rt_price: rt_price.csv
      da_carbon: da_carbon.csv
      rt_carbon: rt_carbon.csv
      demand: demand.csv
      baseline: baseline.csv   # optional, defaults to demand

Relative paths are resolved against the manifest's directory.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .errors import (
    EmptySeries,
    InsufficientHistory,
    LengthMismatch,
    MalformedRow,
    MissingSeries,
    NoPriorValue,
)

HOUR = timedelta(hours=1)

SCENARIO_CHANNELS = ("da_price", "rt_price", "da_carbon", "rt_carbon", "demand", "baseline")
REQUIRED_CHANNELS = SCENARIO_CHANNELS[:-1]

# Default forecaster inputs (RT price and intensity) and the five-signal variant.
RT_CHANNELS = ("rt_price", "rt_carbon")
FULL_CHANNELS = ("da_price", "rt_price", "demand", "da_carbon", "rt_carbon")


def parse_timestamp(text: str) -> datetime:
    """Parse ISO-8601 or epoch seconds into an aware UTC datetime."""
    text = text.strip()
    if not text:
        raise ValueError("empty timestamp")
    try:
        seconds = float(text)
    except ValueError:
        pass
    else:
        if not math.isfinite(seconds):
            raise ValueError(f"non-finite epoch {text!r}")
        return datetime.fromtimestamp(seconds, tz=timezone.utc)
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RawSeries:
    """Irregular observations of one channel, sorted and de-duplicated."""

    name: str
    timestamps: tuple[datetime, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.timestamps) != len(self.values):
            raise LengthMismatch("timestamps and values differ in length")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if not a < b:
                raise ValueError(f"{self.name}: timestamps not strictly increasing at {b}")
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError(f"{self.name}: non-finite value")

    @classmethod
    def from_points(cls, name: str, points: Iterable[tuple[datetime, float]]) -> "RawSeries":
        # later duplicates win
        latest: dict[datetime, float] = {}
        for ts, value in points:
            latest[ts] = float(value)
        ordered = sorted(latest.items())
        return cls(name, tuple(t for t, _ in ordered), tuple(v for _, v in ordered))

    @property
    def points(self) -> list[tuple[datetime, float]]:
        return list(zip(self.timestamps, self.values))

    def __len__(self) -> int:
        return len(self.values)


def parse_series(text: str, column_spec: Mapping[str, str] | None = None, name: str | None = None) -> RawSeries:
    """Parse CSV text into a :class:`RawSeries`.

    ``column_spec`` may carry ``timestamp`` and ``value`` header names
    (defaults: ``timestamp`` / ``value``) and a ``name`` for the series.
    Line numbers in :class:`MalformedRow` count the header as line 1.
    """
    spec = dict(column_spec or {})
    ts_col = spec.get("timestamp", "timestamp")
    val_col = spec.get("value", "value")
    name = name or spec.get("name", val_col)

    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise EmptySeries(f"{name}: no header row") from None
    try:
        ts_idx = header.index(ts_col)
        val_idx = header.index(val_col)
    except ValueError:
        raise MalformedRow(1, f"header {header} lacks {ts_col!r}/{val_col!r}") from None

    points = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        try:
            ts = parse_timestamp(row[ts_idx])
            value = float(row[val_idx])
        except (IndexError, ValueError, OverflowError, OSError) as exc:
            raise MalformedRow(line, str(exc)) from None
        if not math.isfinite(value):
            raise MalformedRow(line, f"non-finite value {row[val_idx]!r}")
        points.append((ts, value))
    if not points:
        raise EmptySeries(f"{name}: zero data rows")
    return RawSeries.from_points(name, points)


def read_series(path: str | Path, column_spec: Mapping[str, str] | None = None, name: str | None = None) -> RawSeries:
    path = Path(path)
    return parse_series(path.read_text(), column_spec, name=name or path.stem)


def write_series(path: str | Path, start: datetime, values: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "value"])
        for h, v in enumerate(values):
            w.writerow([format_timestamp(start + h * HOUR), repr(float(v))])


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioData:
    """Hourly-aligned exogenous signals over ``steps`` intervals.

    Prices in $/MWh, carbon intensities in tCO2/MWh, demand and baseline in
    MWh per hour. Arrays are read-only.
    """

    start: datetime
    da_price: np.ndarray
    rt_price: np.ndarray
    da_carbon: np.ndarray
    rt_carbon: np.ndarray
    demand: np.ndarray
    baseline: np.ndarray = None

    def __post_init__(self):
        if self.baseline is None:
            object.__setattr__(self, "baseline", self.demand)
        for ch in SCENARIO_CHANNELS:
            object.__setattr__(self, ch, _frozen(getattr(self, ch)))
        n = len(self.da_price)
        for ch in SCENARIO_CHANNELS:
            arr = getattr(self, ch)
            if arr.ndim != 1 or len(arr) != n:
                raise LengthMismatch(f"{ch} has shape {arr.shape}, expected ({n},)")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{ch} contains non-finite values")
        for ch in ("demand", "da_carbon", "rt_carbon"):
            if np.any(getattr(self, ch) < 0):
                raise ValueError(f"{ch} must be nonnegative")

    @property
    def steps(self) -> int:
        return len(self.da_price)

    def __len__(self) -> int:
        return self.steps

    def hours(self) -> list[datetime]:
        return [self.start + h * HOUR for h in range(self.steps)]

    def channel(self, name: str) -> np.ndarray:
        if name not in SCENARIO_CHANNELS:
            raise KeyError(name)
        return getattr(self, name)

    def matrix(self, channels: Sequence[str] = RT_CHANNELS) -> np.ndarray:
        return np.column_stack([self.channel(c) for c in channels])

    def slice(self, start: int, stop: int) -> "ScenarioData":
        if not 0 <= start < stop <= self.steps:
            raise IndexError(f"slice [{start}, {stop}) outside [0, {self.steps})")
        return ScenarioData(
            start=self.start + start * HOUR,
            **{ch: getattr(self, ch)[start:stop] for ch in SCENARIO_CHANNELS},
        )

    def replace(self, **channels) -> "ScenarioData":
        fields = {ch: getattr(self, ch) for ch in SCENARIO_CHANNELS}
        fields.update(channels)
        return ScenarioData(start=self.start, **fields)

    def to_raw(self) -> dict[str, RawSeries]:
        hours = tuple(self.hours())
        return {ch: RawSeries(ch, hours, tuple(map(float, getattr(self, ch)))) for ch in SCENARIO_CHANNELS}

    def equals(self, other: "ScenarioData") -> bool:
        return self.start == other.start and all(
            np.array_equal(getattr(self, ch), getattr(other, ch)) for ch in SCENARIO_CHANNELS
        )


def _forward_fill(series: RawSeries, grid: list[datetime]) -> np.ndarray:
    out = np.empty(len(grid))
    j = -1
    n = len(series.timestamps)
    for i, h in enumerate(grid):
        while j + 1 < n and series.timestamps[j + 1] <= h:
            j += 1
        if j < 0:
            raise NoPriorValue(f"{series.name}: first observation {series.timestamps[0]} is after {h}")
        out[i] = series.values[j]
    return out


def align_hourly(raw: Mapping[str, RawSeries] | Iterable[RawSeries], start: datetime, steps: int) -> ScenarioData:
    """Forward-fill every channel onto the hourly grid ``[start, start + steps)``.

    Each hour takes the latest observation at or before it; there is no
    interpolation and no back-fill. A missing ``baseline`` defaults to demand.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not isinstance(raw, Mapping):
        raw = {s.name: s for s in raw}
    missing = [ch for ch in REQUIRED_CHANNELS if ch not in raw]
    if missing:
        raise MissingSeries(f"missing channel(s): {', '.join(missing)}")
    if start.tzinfo is None:
        start = start.replace(tzinfo=timezone.utc)
    grid = [start + h * HOUR for h in range(steps)]
    values = {ch: _forward_fill(raw[ch], grid) for ch in SCENARIO_CHANNELS if ch in raw}
    return ScenarioData(start=start, **values)


@dataclass(frozen=True, eq=False)
class ForecastWindow:
    history: np.ndarray
    channels: tuple[str, ...]
    end_index: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "history", _frozen(self.history))
        if self.history.ndim != 2 or self.history.shape[1] != len(self.channels):
            raise ValueError(f"history shape {self.history.shape} does not match channels {self.channels}")

    @property
    def lookback(self) -> int:
        return self.history.shape[0]


def slice_window(
    scenario: ScenarioData,
    end_index: int,
    lookback: int = 24,
    channels: Sequence[str] = RT_CHANNELS,
) -> ForecastWindow:
    """Rows ``[end_index - lookback, end_index)`` of the selected channels."""
    if lookback < 1:
        raise ValueError("lookback must be >= 1")
    if end_index < lookback:
        raise InsufficientHistory(f"end_index={end_index} < lookback={lookback}")
    if end_index > scenario.steps:
        raise IndexError(f"end_index={end_index} beyond scenario length {scenario.steps}")
    hist = scenario.matrix(channels)[end_index - lookback:end_index]
    return ForecastWindow(hist, tuple(channels), end_index)


def load_manifest(path: str | Path) -> ScenarioData:
    path = Path(path)
    cfg = yaml.safe_load(path.read_text()) or {}
    try:
        start = cfg["start"]
        steps = int(cfg["steps"])
        files = dict(cfg["series"])
    except (KeyError, TypeError) as exc:
        raise MissingSeries(f"manifest {path} lacks {exc}") from None
    if isinstance(start, datetime):
        start = start if start.tzinfo else start.replace(tzinfo=timezone.utc)
    else:
        start = parse_timestamp(str(start))
    raw = {}
    for ch, rel in files.items():
        if ch not in SCENARIO_CHANNELS:
            raise MissingSeries(f"unknown channel {ch!r} in manifest")
        file = Path(rel)
        if not file.is_absolute():
            file = path.parent / file
        raw[ch] = read_series(file, name=ch)
    return align_hourly(raw, start, steps)


def write_manifest(directory: str | Path, scenario: ScenarioData, include_baseline: bool = True) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    series = {}
    for ch in SCENARIO_CHANNELS:
        if ch == "baseline" and not include_baseline:
            continue
        write_series(directory / f"{ch}.csv", scenario.start, getattr(scenario, ch))
        series[ch] = f"{ch}.csv"
    manifest = {"start": format_timestamp(scenario.start), "steps": scenario.steps, "series": series}
    out = directory / "manifest.yaml"
    out.write_text(yaml.safe_dump(manifest, sort_keys=False))
    return out
