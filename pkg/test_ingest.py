"""Tests for detector CSV ingestion into windowed datasets."""

import json

import numpy as np
import pandas as pd
import pytest

from msct.dgp.benchmark import load_benchmark
from msct.errors import ConfigError, DatasetError
from msct.ingest import COVARIATE_COLUMNS, IngestConfig, ingest_csv, read_records, sliding_windows

LOCATIONS = ((10.0, "N"), (12.5, "S"))


def _detector_frame(bins=130, seed=0, congestion=False):
    rng = np.random.default_rng(seed)
    stamps = pd.date_range("2021-03-01 06:00", periods=bins, freq="5min")
    frames = []
    for milepost, direction in LOCATIONS:
        speed = 60.0 + rng.normal(0.0, 2.0, bins)
        crash = np.zeros(bins, dtype=int)
        crash[min(40, bins - 1)] = 3
        frame = pd.DataFrame(
            {
                "timestamp": stamps.strftime("%Y-%m-%d %H:%M:%S"),
                "milepost": milepost,
                "direction": direction,
                "speed": speed,
                "crash_type": crash,
                "day_of_week": stamps.dayofweek,
            }
        )
        for column in COVARIATE_COLUMNS:
            if column != "congestion_index":
                frame[column] = rng.normal(size=bins)
        if congestion:
            frame["congestion_index"] = speed / 70.0
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def _write(tmp_path, frame, name="detectors.csv"):
    path = tmp_path / name
    frame.to_csv(path, index=False)
    return path


def test_stride_equal_to_window_gives_disjoint_windows(tmp_path):
    path = _write(tmp_path, _detector_frame())
    benchmark = ingest_csv(path, None, IngestConfig(window=60, stride=60))
    assert sum(len(units) for units in benchmark.splits.values()) == len(LOCATIONS) * (130 // 60)


def test_sliding_windows_and_chronological_split(tmp_path):
    path = _write(tmp_path, _detector_frame())
    benchmark = ingest_csv(path, None, IngestConfig(window=60))
    sizes = {name: len(units) for name, units in benchmark.splits.items()}
    assert sum(sizes.values()) == len(LOCATIONS) * (130 - 60 + 1)
    assert sizes["test"] == round(0.1 * sum(sizes.values()))
    train_latest = max(u.t0 for u in benchmark.units("train"))
    assert train_latest <= min(u.t0 for u in benchmark.units("val"))
    assert max(u.t0 for u in benchmark.units("val")) <= min(u.t0 for u in benchmark.units("test"))
    assert benchmark.units("val")[0].index == sizes["train"]


def test_window_contents(tmp_path):
    frame = _detector_frame()
    path = _write(tmp_path, frame)
    benchmark = ingest_csv(path, None, IngestConfig(window=60, stride=60))
    unit = benchmark.units("train")[0]
    assert unit.x.shape == (60, len(COVARIATE_COLUMNS))
    assert unit.s[0] == pytest.approx(360 / 1440)
    assert unit.t[40] == 1 and unit.t_type[40] == 3
    assert unit.crash_times == [40]
    ci = COVARIATE_COLUMNS.index("congestion_index")
    np.testing.assert_allclose(unit.x[:, ci], unit.y / 65.0)
    assert benchmark.num_classes == 4
    assert benchmark.kind == "real"


def test_supplied_congestion_index_is_kept(tmp_path):
    path = _write(tmp_path, _detector_frame(congestion=True))
    unit = ingest_csv(path, None, IngestConfig(window=60, stride=60)).units("train")[0]
    np.testing.assert_allclose(unit.x[:, COVARIATE_COLUMNS.index("congestion_index")], unit.y / 70.0)


def test_windows_spanning_a_missing_bin_are_skipped(tmp_path):
    frame = _detector_frame().drop(index=70).reset_index(drop=True)
    cfg = IngestConfig(window=60)
    units, skipped = sliding_windows(read_records(_write(tmp_path, frame), cfg), cfg)
    assert skipped == {"10/N": 59, "12.5/S": 0}
    assert len(units) == 11 + 71


def test_missing_column_is_named(tmp_path):
    path = _write(tmp_path, _detector_frame().drop(columns=["volume"]))
    with pytest.raises(DatasetError) as err:
        ingest_csv(path, None)
    assert err.value.column == "volume"


def test_bad_crash_type_reports_the_csv_line(tmp_path):
    frame = _detector_frame()
    frame.loc[5, "crash_type"] = 7
    with pytest.raises(DatasetError) as err:
        ingest_csv(_write(tmp_path, frame), None)
    assert err.value.row == 7
    assert err.value.column == "crash_type"


@pytest.mark.parametrize(
    "column,value",
    [("timestamp", "yesterday"), ("speed", "fast"), ("congestion_index", -0.5)],
)
def test_invalid_values_are_rejected(tmp_path, column, value):
    frame = _detector_frame(congestion=True)
    frame[column] = frame[column].astype(object)
    frame.loc[3, column] = value
    with pytest.raises(DatasetError) as err:
        ingest_csv(_write(tmp_path, frame), None)
    assert err.value.column == column
    assert err.value.row == 5


def test_duplicate_bins_are_rejected(tmp_path):
    frame = _detector_frame()
    frame = pd.concat([frame, frame.iloc[[10]]], ignore_index=True)
    with pytest.raises(DatasetError):
        ingest_csv(_write(tmp_path, frame), None)


def test_missing_file_and_too_few_bins(tmp_path):
    with pytest.raises(DatasetError):
        ingest_csv(tmp_path / "absent.csv", None)
    with pytest.raises(DatasetError):
        ingest_csv(_write(tmp_path, _detector_frame(bins=30)), None)


@pytest.mark.parametrize("kwargs", [{"window": 8}, {"stride": 0}, {"speed_limit": 0.0}, {"val_fraction": 0.6, "test_fraction": 0.5}])
def test_invalid_ingest_config(kwargs):
    with pytest.raises(ConfigError):
        IngestConfig(**kwargs)


def test_ingested_directory_loads_back(tmp_path):
    out = tmp_path / "real"
    ingested = ingest_csv(_write(tmp_path, _detector_frame()), out, IngestConfig(window=60, stride=10))
    loaded = load_benchmark(out)
    assert loaded.kind == "real" and loaded.tau_max == 5
    assert {k: len(v) for k, v in loaded.splits.items()} == {k: len(v) for k, v in ingested.splits.items()}
    np.testing.assert_allclose(loaded.units("test")[0].y, ingested.units("test")[0].y)
    assert all(cf == {} for cf in loaded.counterfactuals["test"])
    stats = json.loads((out / "stats.json").read_text())
    assert set(stats) == {"speed", *COVARIATE_COLUMNS, "time_of_day", "day_of_week"}
    assert json.loads((out / "skipped.json").read_text())["total"] == 0
