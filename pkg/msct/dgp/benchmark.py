"""Benchmark directories: ``config.json`` plus one JSON-lines file per split.

Each record is ``{"x", "t", "t_type", "y", "s", "cf"}``; ``cf`` maps an anchor
to ``{strategy label: [y, ...]}`` on val/test and is empty on train. Real-data
directories written by ingestion share the layout with empty ``cf`` sections.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from msct.dgp.config import BenchmarkSizes, DgpConfig, sliding_strategies
from msct.dgp.simulate import (
    TimeSeriesUnit,
    calibrate_threshold,
    draw_unit_noise,
    simulate_counterfactuals,
    simulate_unit,
)
from msct.errors import DatasetError
from msct.logging_config import logger
from msct.utils.config_utils import config_hash
from msct.utils.json_utils import iter_jsonl, read_json, write_json, write_jsonl
from msct.utils.parallel import parallel_map

SPLITS = ("train", "val", "test")
SYNTHETIC_CLASSES = 2


@dataclass
class Benchmark:
    meta: dict
    splits: dict[str, list[TimeSeriesUnit]]
    counterfactuals: dict[str, list[dict[int, dict[str, np.ndarray]]]] = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.meta.get("kind", "synthetic")

    @property
    def num_classes(self) -> int:
        return int(self.meta.get("k", SYNTHETIC_CLASSES))

    @property
    def tau_max(self) -> int:
        return int(self.meta.get("tau_max", self.meta.get("dgp", {}).get("tau_max", 5)))

    @property
    def dgp_config(self) -> DgpConfig | None:
        return DgpConfig(**self.meta["dgp"]) if "dgp" in self.meta else None

    def units(self, split: str) -> list[TimeSeriesUnit]:
        if split not in self.splits:
            raise DatasetError(f"benchmark has no '{split}' split")
        return self.splits[split]


# --- records ---------------------------------------------------------------


def unit_to_record(unit: TimeSeriesUnit, cf: dict[int, dict[str, np.ndarray]] | None = None) -> dict:
    return {
        "x": unit.x.tolist(),
        "t": unit.t.tolist(),
        "t_type": unit.t_type.tolist(),
        "y": unit.y.tolist(),
        "s": unit.s.tolist(),
        "cf": {
            str(anchor): {label: list(map(float, ys)) for label, ys in branches.items()}
            for anchor, branches in (cf or {}).items()
        },
    }


def record_to_unit(record: dict, index: int, row: int | None = None) -> tuple[TimeSeriesUnit, dict]:
    missing = [key for key in ("x", "t", "t_type", "y", "s") if key not in record]
    if missing:
        raise DatasetError("record is missing a field", row=row, column=missing[0])
    x = np.asarray(record["x"], dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    t = np.asarray(record["t"], dtype=np.int64)
    y = np.asarray(record["y"], dtype=np.float64)
    if not len(x) == len(t) == len(y) == len(record["t_type"]):
        raise DatasetError("sequence lengths differ", row=row)
    unit = TimeSeriesUnit(
        x=x,
        t=t,
        t_type=np.asarray(record["t_type"], dtype=np.int64),
        y=y,
        s=np.asarray(record["s"], dtype=np.float64),
        crash_times=[int(i) for i in np.flatnonzero(t)],
        index=index,
    )
    cf = {
        int(anchor): {label: np.asarray(ys, dtype=np.float64) for label, ys in branches.items()}
        for anchor, branches in record.get("cf", {}).items()
    }
    return unit, cf


# --- generation ------------------------------------------------------------


def _draw_covariates(args: tuple[DgpConfig, int]) -> np.ndarray:
    cfg, index = args
    return draw_unit_noise(cfg, index).x


def _simulate(args: tuple[DgpConfig, int, float, bool]) -> tuple[TimeSeriesUnit, dict]:
    cfg, index, threshold, expand = args
    unit = simulate_unit(draw_unit_noise(cfg, index), cfg, threshold)
    cf = expand_counterfactuals(unit, cfg) if expand else {}
    unit.noise = None
    return unit, cf


def expand_counterfactuals(unit: TimeSeriesUnit, cfg: DgpConfig) -> dict[int, dict[str, np.ndarray]]:
    """Single-sliding-treatment branches for every anchor over ``tau_max + 1`` horizons."""
    strategies = sliding_strategies(cfg.tau_max)
    expansion = {}
    for anchor in cfg.anchors:
        outcomes = simulate_counterfactuals(unit, anchor, strategies, cfg, horizon=cfg.tau_max + 1)
        expansion[anchor] = {s.label: outcomes[i] for i, s in enumerate(strategies)}
    return expansion


def build_benchmark(
    cfg: DgpConfig,
    sizes: BenchmarkSizes | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> Benchmark:
    """Generate train (factual only) and val/test (with counterfactuals) splits.

    Parallel generation (``jobs > 1``) returns exactly the sequential result.
    """
    sizes = sizes or BenchmarkSizes()
    indices = list(range(sizes.total))
    covariates = np.stack(parallel_map(_draw_covariates, [(cfg, i) for i in indices], jobs))
    threshold = calibrate_threshold(covariates, cfg)
    if cfg.confounded and cfg.crash_percentile < 50:
        logger.warning(
            "crash_percentile=%s makes most steps crashes; the top-decile reading uses 90",
            cfg.crash_percentile,
        )

    splits: dict[str, list[TimeSeriesUnit]] = {}
    counterfactuals: dict[str, list[dict]] = {}
    for split, span in sizes.split_ranges().items():
        expand = split != "train"
        results = parallel_map(_simulate, [(cfg, i, threshold, expand) for i in span], jobs)
        splits[split] = [unit for unit, _ in results]
        counterfactuals[split] = [cf for _, cf in results]

    treated = np.mean(np.concatenate([u.t[1:] for u in splits["train"]]))
    logger.info("Generated %d units (threshold %.4f, train crash rate %.3f)", sizes.total, threshold, treated)

    meta = {
        "kind": "synthetic",
        "dgp": asdict(cfg),
        "sizes": asdict(sizes),
        "threshold": threshold,
        "k": SYNTHETIC_CLASSES,
        "d_x": 1,
        "d_s": 1,
        "tau_max": cfg.tau_max,
        "seeds": {"master": cfg.seed, "unit": "default_rng([master, unit_index])"},
        "config_hash": config_hash(cfg),
    }
    benchmark = Benchmark(meta, splits, counterfactuals)
    if out_dir is not None:
        save_benchmark(benchmark, out_dir)
    return benchmark


# --- persistence -----------------------------------------------------------


def save_benchmark(benchmark: Benchmark, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    write_json(out_dir / "config.json", benchmark.meta)
    for split, units in benchmark.splits.items():
        cfs = benchmark.counterfactuals.get(split) or [{}] * len(units)
        write_jsonl(out_dir / f"{split}.jsonl", (unit_to_record(u, cf) for u, cf in zip(units, cfs)))
    return out_dir


def _read_split(path: Path, offset: int = 0) -> Iterable[tuple[TimeSeriesUnit, dict]]:
    for row, record in enumerate(iter_jsonl(path), start=1):
        yield record_to_unit(record, index=offset + row - 1, row=row)


def load_benchmark(path: str | Path) -> Benchmark:
    path = Path(path)
    if not (path / "config.json").exists():
        raise DatasetError(f"{path} is not a dataset directory (config.json missing)")
    meta = read_json(path / "config.json")
    splits, counterfactuals = {}, {}
    offsets = {}
    if "sizes" in meta:
        offsets = {name: span.start for name, span in BenchmarkSizes(**meta["sizes"]).split_ranges().items()}
    for split in SPLITS:
        split_path = path / f"{split}.jsonl"
        if not split_path.exists():
            continue
        pairs = list(_read_split(split_path, offsets.get(split, 0)))
        splits[split] = [unit for unit, _ in pairs]
        counterfactuals[split] = [cf for _, cf in pairs]
    logger.debug("Loaded %s: %s", path, {k: len(v) for k, v in splits.items()})
    return Benchmark(meta, splits, counterfactuals)
