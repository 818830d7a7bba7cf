"""Experiment reports: per-seed metrics, seed means, CSV/JSON and plot-data files."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from msct.logging_config import logger
from msct.models import RESERVED_MODELS
from msct.utils.csv_utils import upsert_row, write_table
from msct.utils.file_paths import ensure_dir
from msct.utils.json_utils import write_json

CSV_COLUMNS = ["model", "axis", "axis_value", "horizon", "rmse", "rmse_std", "crmse", "crmse_std", "seeds", "status"]


def finite_or_none(values) -> list[float | None]:
    """NaN -> None so absent cells stay explicit in JSON."""
    return [None if v is None or not np.isfinite(v) else float(v) for v in values]


@dataclass
class SeedResult:
    seed: int
    rmse: list[float | None]
    crmse: list[float | None] | None = None
    crmse_used: int = 0
    crmse_skipped: int = 0


@dataclass
class ExperimentReport:
    model: str
    rmse: list[float | None]  # horizons 1 .. tau_max + 1
    crmse: list[float | None] | None  # horizons 1 .. tau_max
    seeds: list[int]
    config_hash: str
    rmse_std: list[float | None] = field(default_factory=list)
    crmse_std: list[float | None] | None = None
    per_seed: list[SeedResult] = field(default_factory=list)
    axis: str | None = None
    axis_value: float | None = None
    status: str = "ok"
    meta: dict = field(default_factory=dict)

    @classmethod
    def aggregate(
        cls,
        model: str,
        results: Sequence[SeedResult],
        config_hash: str,
        axis: str | None = None,
        axis_value: float | None = None,
        meta: dict | None = None,
    ) -> "ExperimentReport":
        """Mean and spread over seeds; a horizon stays absent if every seed lacks it."""
        rmse = np.array([[np.nan if v is None else v for v in r.rmse] for r in results], dtype=np.float64)
        crmse_mean = crmse_std = None
        if all(r.crmse is not None for r in results):
            crmse = np.array([[np.nan if v is None else v for v in r.crmse] for r in results], dtype=np.float64)
            crmse_mean, crmse_std = finite_or_none(_nanmean(crmse)), finite_or_none(_nanstd(crmse))
        return cls(
            model=model,
            rmse=finite_or_none(_nanmean(rmse)),
            rmse_std=finite_or_none(_nanstd(rmse)),
            crmse=crmse_mean,
            crmse_std=crmse_std,
            seeds=[r.seed for r in results],
            config_hash=config_hash,
            per_seed=list(results),
            axis=axis,
            axis_value=axis_value,
            meta={"strategy_weighting": "equal", **(meta or {})},
        )

    @classmethod
    def absent(cls, model: str, horizons: int, tau_max: int, config_hash: str = "") -> "ExperimentReport":
        """Reserved comparison row with every cell marked absent."""
        return cls(
            model=model,
            rmse=[None] * horizons,
            crmse=[None] * tau_max,
            seeds=[],
            config_hash=config_hash,
            rmse_std=[None] * horizons,
            crmse_std=[None] * tau_max,
            status="absent",
        )

    @property
    def horizons(self) -> list[int]:
        return list(range(1, len(self.rmse) + 1))

    def to_rows(self) -> list[dict]:
        rows = []
        for i, horizon in enumerate(self.horizons):
            crmse = self.crmse[i] if self.crmse is not None and i < len(self.crmse) else None
            crmse_std = self.crmse_std[i] if self.crmse_std is not None and i < len(self.crmse_std) else None
            rows.append(
                {
                    "model": self.model,
                    "axis": self.axis,
                    "axis_value": self.axis_value,
                    "horizon": horizon,
                    "rmse": self.rmse[i],
                    "rmse_std": self.rmse_std[i] if i < len(self.rmse_std) else None,
                    "crmse": crmse,
                    "crmse_std": crmse_std,
                    "seeds": len(self.seeds),
                    "status": self.status if self.rmse[i] is not None else "absent",
                }
            )
        return rows

    def to_dict(self) -> dict:
        return asdict(self)


def _nanmean(values: np.ndarray) -> np.ndarray:
    counts = np.isfinite(values).sum(axis=0)
    sums = np.where(np.isfinite(values), values, 0.0).sum(axis=0)
    return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)


def _nanstd(values: np.ndarray) -> np.ndarray:
    mean = _nanmean(values)
    finite = np.isfinite(values)
    counts = finite.sum(axis=0)
    sq = np.where(finite, (values - mean) ** 2, 0.0).sum(axis=0)
    return np.where(counts > 0, np.sqrt(sq / np.maximum(counts, 1)), np.nan)


def with_reserved(reports: list[ExperimentReport], tau_max: int, include: bool = True) -> list[ExperimentReport]:
    """Append the reserved comparison rows, marked absent."""
    if not include or not reports:
        return reports
    horizons = len(reports[0].rmse)
    names = {r.model for r in reports}
    return reports + [ExperimentReport.absent(m, horizons, tau_max) for m in RESERVED_MODELS if m not in names]


def write_reports(reports: Sequence[ExperimentReport], out_dir: str | Path, stem: str) -> tuple[Path, Path]:
    """``{stem}.csv`` (one row per model x horizon) and ``{stem}.json`` (full provenance)."""
    out_dir = Path(out_dir)
    rows = [row for report in reports for row in report.to_rows()]
    write_table(out_dir / f"{stem}.csv", rows, CSV_COLUMNS)
    write_json(out_dir / f"{stem}.json", [r.to_dict() for r in reports])
    return out_dir / f"{stem}.csv", out_dir / f"{stem}.json"


def write_series(reports: Sequence[ExperimentReport], path: str | Path, horizon: int | None = None) -> dict:
    """Plot data: per model, the sweep axis values against RMSE at ``horizon`` (default last)."""
    series: dict[str, dict] = {}
    for report in reports:
        if report.axis is None:
            continue
        index = (horizon or len(report.rmse)) - 1
        entry = series.setdefault(report.model, {"axis": report.axis, "x": [], "y": [], "y_std": [], "config_hash": []})
        entry["x"].append(report.axis_value)
        entry["y"].append(report.rmse[index])
        entry["y_std"].append(report.rmse_std[index] if report.rmse_std else None)
        entry["config_hash"].append(report.config_hash)
    write_json(Path(path), series)
    return series


def write_tables(reports: Sequence[ExperimentReport], out_dir: str | Path, stem: str) -> dict[str, Path]:
    """Model x horizon tables, ``{stem}_rmse.csv`` and ``{stem}_crmse.csv``; absent cells stay empty."""
    out_dir = ensure_dir(out_dir)
    rows = pd.DataFrame([row for report in reports for row in report.to_rows()], columns=CSV_COLUMNS)
    order = pd.unique(rows["model"])
    paths = {}
    for metric in ("rmse", "crmse"):
        table = rows.pivot(index="model", columns="horizon", values=metric).reindex(order)
        if metric == "crmse":
            table = table.loc[:, table.notna().any(axis=0)] if table.notna().any().any() else table
        table.columns = [f"h{h}" for h in table.columns]
        path = out_dir / f"{stem}_{metric}.csv"
        table.to_csv(path, float_format="%.6f")
        logger.file("Wrote %s table to %s", metric.upper(), path)
        paths[metric] = path
    return paths


def upsert_summary(reports: Sequence[ExperimentReport], path: str | Path) -> None:
    """One row per model with the last-horizon metrics; reruns replace their rows."""
    for report in reports:
        if report.status != "ok":
            continue
        upsert_row(
            Path(path),
            "model",
            {
                "model": report.model,
                "rmse_last": report.rmse[-1],
                "crmse_last": report.crmse[-1] if report.crmse else None,
                "seeds": len(report.seeds),
                "config_hash": report.config_hash,
            },
        )
