from __future__ import annotations

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carbon_ems.errors import EmptySeries, InsufficientHistory, MalformedRow, MissingSeries, NoPriorValue
from carbon_ems.market_data import (
    REQUIRED_CHANNELS, RawSeries, align_hourly, load_manifest, parse_series, parse_timestamp,
    slice_window, write_manifest,
)

from conftest import START, make_scenario

H = timedelta(hours=1)


def dense(name, values, start=START):
    return RawSeries(name, tuple(start + i * H for i in range(len(values))), tuple(map(float, values)))


def full_raw(T=3, **override):
    raw = {ch: dense(ch, np.arange(T) + 1.0) for ch in REQUIRED_CHANNELS}
    raw.update(override)
    return raw


class TestParseSeries:
    def test_two_rows(self):
        s = parse_series("timestamp,value\n2024-01-01T00:00:00Z,1.5\n2024-01-01T01:00:00Z,2.5\n")
        assert len(s) == 2
        assert s.values == (1.5, 2.5)

    def test_out_of_order_rows_are_sorted(self):
        s = parse_series("timestamp,value\n2024-01-01T02:00:00Z,3\n2024-01-01T00:00:00Z,1\n2024-01-01T01:00:00Z,2\n")
        assert s.values == (1.0, 2.0, 3.0)
        assert list(s.timestamps) == sorted(s.timestamps)

    def test_bad_value_reports_line_number(self):
        text = "timestamp,value\n2024-01-01T00:00:00Z,1\n2024-01-01T01:00:00Z,abc\n"
        with pytest.raises(MalformedRow) as info:
            parse_series(text)
        assert info.value.line == 3

    def test_duplicates_keep_last(self):
        s = parse_series("timestamp,value\n2024-01-01T00:00:00Z,1\n2024-01-01T00:00:00Z,7\n")
        assert s.values == (7.0,)

    def test_empty(self):
        with pytest.raises(EmptySeries):
            parse_series("timestamp,value\n")
        with pytest.raises(EmptySeries):
            parse_series("")

    def test_epoch_and_custom_columns(self):
        s = parse_series("t,price\n0,5\n3600,6\n", column_spec={"timestamp": "t", "value": "price"})
        assert s.timestamps[0] == datetime(1970, 1, 1, tzinfo=timezone.utc)
        assert s.values == (5.0, 6.0)

    def test_missing_column(self):
        with pytest.raises(MalformedRow) as info:
            parse_series("time,value\n0,1\n")
        assert info.value.line == 1

    def test_nan_rejected(self):
        with pytest.raises(MalformedRow):
            parse_series("timestamp,value\n0,nan\n")

    def test_offset_timestamps_become_utc(self):
        assert parse_timestamp("2024-01-01T02:00:00+02:00") == datetime(2024, 1, 1, tzinfo=timezone.utc)


class TestAlignHourly:
    def test_forward_fill_gap(self):
        raw = full_raw(3, da_price=RawSeries("da_price", (START, START + 2 * H), (10.0, 14.0)))
        sc = align_hourly(raw, START, 3)
        assert list(sc.da_price) == [10.0, 10.0, 14.0]

    def test_dense_copied(self):
        sc = align_hourly(full_raw(4), START, 4)
        assert list(sc.rt_price) == [1.0, 2.0, 3.0, 4.0]

    def test_no_prior_value(self):
        raw = full_raw(3, demand=RawSeries("demand", (START + H,), (1.0,)))
        with pytest.raises(NoPriorValue):
            align_hourly(raw, START, 3)

    def test_missing_channel(self):
        raw = full_raw(3)
        del raw["rt_carbon"]
        with pytest.raises(MissingSeries):
            align_hourly(raw, START, 3)

    def test_baseline_defaults_to_demand(self):
        sc = align_hourly(full_raw(3), START, 3)
        assert np.array_equal(sc.baseline, sc.demand)

    def test_off_grid_observations(self):
        # a reading at 00:30 applies from 01:00 on; nothing is interpolated
        s = RawSeries("da_price", (START, START + H / 2, START + 2.5 * H), (1.0, 2.0, 3.0))
        sc = align_hourly(full_raw(4, da_price=s), START, 4)
        assert list(sc.da_price) == [1.0, 2.0, 2.0, 3.0]

    def test_arrays_read_only(self):
        sc = align_hourly(full_raw(3), START, 3)
        with pytest.raises(ValueError):
            sc.demand[0] = 5.0


@settings(max_examples=60, deadline=None)
@given(
    offsets=st.lists(st.integers(min_value=1, max_value=40), min_size=0, max_size=12, unique=True),
    values=st.lists(st.floats(-100, 100, allow_nan=False), min_size=13, max_size=13),
    steps=st.integers(min_value=1, max_value=48),
)
def test_alignment_idempotent_and_exact_on_grid(offsets, values, steps):
    hours = [0] + sorted(offsets)
    stamps = tuple(START + h * H for h in hours)
    vals = tuple(values[: len(hours)])
    raw = full_raw(1, da_price=RawSeries("da_price", stamps, vals))
    once = align_hourly(raw, START, steps)
    twice = align_hourly(once.to_raw(), START, steps)
    assert once.equals(twice)
    for h, v in zip(hours, vals):
        if h < steps:
            assert once.da_price[h] == v
    # forward fill: each hour equals the latest observation at or before it
    for i in range(steps):
        latest = max(h for h in hours if h <= i)
        assert once.da_price[i] == vals[hours.index(latest)]


class TestSliceWindow:
    def test_rows_cover_preceding_hours(self):
        sc = make_scenario(48, rt_price=np.arange(48.0))
        w = slice_window(sc, 24, 24)
        assert w.history.shape == (24, 2)
        assert list(w.history[:, 0]) == list(range(24))

    def test_insufficient(self):
        sc = make_scenario(48)
        with pytest.raises(InsufficientHistory):
            slice_window(sc, 23, 24)

    def test_five_channels(self):
        sc = make_scenario(30)
        w = slice_window(sc, 30, 24, ("da_price", "rt_price", "demand", "da_carbon", "rt_carbon"))
        assert w.history.shape == (24, 5)


def test_manifest_round_trip(tmp_path):
    sc = make_scenario(6, rt_price=[1, -2, 3.25, 4, 5, 6], baseline=[0, 1, 0, 1, 0, 1])
    path = write_manifest(tmp_path, sc)
    back = load_manifest(path)
    assert back.equals(sc)


def test_manifest_without_baseline(tmp_path):
    sc = make_scenario(4, demand=[1, 2, 3, 4], baseline=[0, 0, 0, 0])
    path = write_manifest(tmp_path, sc, include_baseline=False)
    back = load_manifest(path)
    assert np.array_equal(back.baseline, back.demand)
