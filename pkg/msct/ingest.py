"""Real-world detector CSV -> sliding-window dataset in the benchmark layout.

One record per (milepost, direction, 5-minute bin). Each location's series is
cut into windows of ``window`` contiguous bins; windows spanning a missing bin
are skipped and counted. Speed is the outcome, crash type (0 none, 1 OBJ,
2 WIPE, 3 REAR) the treatment, the remaining traffic readings the covariates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from msct.data import Normalizer
from msct.dgp.benchmark import Benchmark, save_benchmark
from msct.dgp.config import BenchmarkSizes
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import ConfigError, DatasetError
from msct.logging_config import logger
from msct.utils.config_utils import config_hash
from msct.utils.json_utils import write_json

CRASH_TYPES = {0: "none", 1: "OBJ", 2: "WIPE", 3: "REAR"}
NUM_CLASSES = len(CRASH_TYPES)
MAX_CONGESTION_INDEX = 1.5

KEY_COLUMNS = ["timestamp", "milepost", "direction"]
COVARIATE_COLUMNS = [
    "occupancy",
    "volume",
    "congestion_index",
    "max_lane_speed_diff",
    "up1_speed",
    "up1_ci",
    "up2_speed",
    "up2_ci",
    "down1_speed",
    "down1_ci",
    "down2_speed",
    "down2_ci",
    "weather",
]
STATIC_FEATURES = ["time_of_day", "day_of_week"]
REQUIRED_COLUMNS = KEY_COLUMNS + ["speed", "crash_type", "day_of_week"] + [
    c for c in COVARIATE_COLUMNS if c != "congestion_index"
]


@dataclass
class IngestConfig:
    window: int = 60
    stride: int = 1
    bin_minutes: int = 5
    speed_limit: float = 65.0
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    tau_max: int = 5

    def __post_init__(self):
        if self.stride < 1 or self.bin_minutes < 1:
            raise ConfigError("ingest.stride", "stride and bin_minutes must be >= 1")
        if self.window < self.tau_max + 4:
            raise ConfigError("ingest.window", f"must be >= tau_max + 4 = {self.tau_max + 4}")
        if self.speed_limit <= 0:
            raise ConfigError("ingest.speed_limit", "must be positive")
        if self.val_fraction < 0 or self.test_fraction < 0 or self.val_fraction + self.test_fraction >= 1:
            raise ConfigError("ingest.val_fraction", "val and test fractions must be >= 0 and sum below 1")


def _line(index) -> int:
    """CSV line number of a data row (line 1 is the header)."""
    return int(index) + 2


def read_records(csv_path: str | Path, cfg: IngestConfig) -> pd.DataFrame:
    """Load and validate detector records; errors name the offending column or CSV line."""
    csv_path = Path(csv_path)
    try:
        frame = pd.read_csv(csv_path)
    except FileNotFoundError as err:
        raise DatasetError(f"CSV file not found: {csv_path}") from err
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise DatasetError(f"cannot parse {csv_path}: {err}") from err

    frame.columns = [str(c).strip() for c in frame.columns]
    for column in REQUIRED_COLUMNS:
        if column not in frame.columns:
            raise DatasetError("missing required column", column=column)

    timestamps = pd.to_datetime(frame["timestamp"], errors="coerce")
    bad = timestamps.isna()
    if bad.any():
        raise DatasetError("unparsable timestamp", row=_line(bad.idxmax()), column="timestamp")
    frame["timestamp"] = timestamps.dt.floor(f"{cfg.bin_minutes}min")

    numeric = ["milepost", "speed", "crash_type", "day_of_week"] + [c for c in COVARIATE_COLUMNS if c in frame.columns]
    for column in numeric:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = values.isna()
        if bad.any():
            raise DatasetError("non-numeric value", row=_line(bad.idxmax()), column=column)
        frame[column] = values.astype(np.float64)

    if "congestion_index" not in frame.columns:
        frame["congestion_index"] = frame["speed"] / cfg.speed_limit
    ci = frame["congestion_index"]
    bad = (ci <= 0) | ~np.isfinite(ci)
    if bad.any():
        raise DatasetError("congestion index must be positive", row=_line(bad.idxmax()), column="congestion_index")
    if (ci > MAX_CONGESTION_INDEX).any():
        logger.warning("%d records have a congestion index above %.1f", int((ci > MAX_CONGESTION_INDEX).sum()), MAX_CONGESTION_INDEX)

    crash = frame["crash_type"]
    bad = ~crash.isin(list(CRASH_TYPES))
    if bad.any():
        raise DatasetError(f"crash type outside {sorted(CRASH_TYPES)}", row=_line(bad.idxmax()), column="crash_type")
    frame["crash_type"] = crash.astype(np.int64)

    duplicated = frame.duplicated(KEY_COLUMNS, keep="first")
    if duplicated.any():
        raise DatasetError("more than one record per location and bin", row=_line(duplicated.idxmax()))
    return frame


def _window_unit(rows: pd.DataFrame, cfg: IngestConfig, index: int) -> TimeSeriesUnit:
    start = rows["timestamp"].iloc[0]
    minute = start.hour * 60 + start.minute
    crash_type = rows["crash_type"].to_numpy(np.int64)
    t = (crash_type > 0).astype(np.int64)
    return TimeSeriesUnit(
        x=rows[COVARIATE_COLUMNS].to_numpy(np.float64),
        t=t,
        t_type=crash_type,
        y=rows["speed"].to_numpy(np.float64),
        s=np.array([minute / 1440.0, rows["day_of_week"].iloc[0] / 6.0]),
        crash_times=[int(i) for i in np.flatnonzero(t)],
        index=index,
        t0=minute // cfg.bin_minutes,
    )


def sliding_windows(frame: pd.DataFrame, cfg: IngestConfig) -> tuple[list[TimeSeriesUnit], dict]:
    """Windows per location in chronological order, plus per-location gap-skip counts."""
    units, skipped = [], {}
    bin_delta = pd.Timedelta(minutes=cfg.bin_minutes)
    starts = []
    for (milepost, direction), rows in frame.groupby(["milepost", "direction"], sort=True):
        rows = rows.sort_values("timestamp").reset_index(drop=True)
        steps = ((rows["timestamp"] - rows["timestamp"].iloc[0]) / bin_delta).to_numpy(np.int64)
        location = f"{milepost:g}/{direction}"
        skipped[location] = 0
        for begin in range(0, len(rows) - cfg.window + 1, cfg.stride):
            end = begin + cfg.window
            if steps[end - 1] - steps[begin] != cfg.window - 1:
                skipped[location] += 1
                continue
            window = rows.iloc[begin:end]
            units.append(_window_unit(window, cfg, -1))
            starts.append((window["timestamp"].iloc[0], location))
    order = sorted(range(len(units)), key=lambda i: starts[i])
    return [units[i] for i in order], skipped


def split_windows(units: list[TimeSeriesUnit], cfg: IngestConfig) -> tuple[dict[str, list[TimeSeriesUnit]], BenchmarkSizes]:
    """Chronological split: the latest windows go to test, the ones before them to val."""
    n = len(units)
    n_test = max(1, int(round(n * cfg.test_fraction)))
    n_val = max(1, int(round(n * cfg.val_fraction)))
    if n - n_test - n_val < 1:
        raise DatasetError(f"{n} windows are too few for a train/val/test split")
    sizes = BenchmarkSizes(train=n - n_val - n_test, val=n_val, test=n_test)
    splits = {}
    for name, span in sizes.split_ranges().items():
        splits[name] = units[span.start : span.stop]
        for position, unit in zip(span, splits[name]):
            unit.index = position
    return splits, sizes


def feature_stats(train: list[TimeSeriesUnit]) -> dict:
    """Per-feature mean and standard deviation over the training windows."""
    normalizer = Normalizer.fit(train)
    stats = {"speed": {"mean": normalizer.y_mean, "std": normalizer.y_std}}
    for i, name in enumerate(COVARIATE_COLUMNS):
        stats[name] = {"mean": float(normalizer.x_mean[i]), "std": float(normalizer.x_std[i])}
    for i, name in enumerate(STATIC_FEATURES):
        stats[name] = {"mean": float(normalizer.s_mean[i]), "std": float(normalizer.s_std[i])}
    return stats


def ingest_csv(csv_path: str | Path, out_dir: str | Path | None, cfg: IngestConfig | None = None) -> Benchmark:
    """Build (and, given ``out_dir``, write) a real-data dataset directory from a detector CSV."""
    cfg = cfg or IngestConfig()
    frame = read_records(csv_path, cfg)
    units, skipped = sliding_windows(frame, cfg)
    total_skipped = sum(skipped.values())
    if total_skipped:
        logger.warning("Skipped %d windows spanning missing bins", total_skipped)
    if not units:
        raise DatasetError(f"no complete {cfg.window}-bin window in {csv_path}")
    splits, sizes = split_windows(units, cfg)

    meta = {
        "kind": "real",
        "source": Path(csv_path).name,
        "ingest": asdict(cfg),
        "sizes": asdict(sizes),
        "k": NUM_CLASSES,
        "crash_types": {str(k): v for k, v in CRASH_TYPES.items()},
        "d_x": len(COVARIATE_COLUMNS),
        "d_s": len(STATIC_FEATURES),
        "features": COVARIATE_COLUMNS,
        "static": STATIC_FEATURES,
        "tau_max": cfg.tau_max,
        "records": len(frame),
    }
    meta["config_hash"] = config_hash(meta)
    benchmark = Benchmark(meta, splits, {name: [{} for _ in split] for name, split in splits.items()})
    logger.info("Ingested %d records into %d windows (%s)", len(frame), len(units), asdict(sizes))

    if out_dir is not None:
        out_dir = Path(out_dir)
        save_benchmark(benchmark, out_dir)
        write_json(out_dir / "stats.json", feature_stats(splits["train"]))
        write_json(out_dir / "skipped.json", {"total": total_skipped, "per_location": skipped})
    return benchmark
