"""Multi-seed experiments: model tables, confounding and crash-ratio sweeps, ablations.

Every (point, model, seed) job is independent; jobs run through
``parallel_map`` and are aggregated in submission order, so ``jobs > 1``
reproduces the sequential reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from pydantic import ValidationError

from msct.dgp.benchmark import SPLITS, Benchmark, build_benchmark
from msct.dgp.config import BenchmarkSizes, DgpConfig
from msct.errors import ConfigError, UsageError
from msct.eval.report import ExperimentReport, SeedResult, finite_or_none, with_reserved, write_reports, write_series
from msct.logging_config import logger
from msct.models import resolve_model
from msct.pipelines.pipeline import PipelineConfig, evaluate_forecaster, train_forecaster
from msct.schemas import VariantConfig
from msct.utils.config_utils import config_hash, list_configs, load_yaml
from msct.utils.parallel import parallel_map
from msct.utils.timing import Timer

PROJECT_ROOT = Path(__file__).resolve().parent.parent.parent


@dataclass
class EvalConfig:
    split: str = "test"
    factual_only: bool = False
    anchor_stride: int = 1
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    models: list[str] = field(default_factory=lambda: ["msct", "lstm-baseline"])
    include_reserved: bool = True
    curve_units: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ConfigError("eval.split", f"expected one of {SPLITS}, got {self.split!r}")
        if not self.seeds:
            raise ConfigError("eval.seeds", "at least one seed is required")
        if self.anchor_stride < 1:
            raise ConfigError("eval.anchor_stride", "must be >= 1")
        for name in self.models:
            resolve_model(name)


@dataclass
class SweepConfig:
    omegas: list[int] = field(default_factory=lambda: [1, 3, 5, 7, 10])
    crash_ratios: list[float] = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    ratio_sample_size: int | None = None
    variants_dir: str = "config/variants"

    def __post_init__(self):
        if not self.omegas or min(self.omegas) < 1:
            raise ConfigError("sweep.omegas", "needs at least one window >= 1")
        if not self.crash_ratios or not all(0.0 <= r <= 1.0 for r in self.crash_ratios):
            raise ConfigError("sweep.crash_ratios", "ratios must lie in [0, 1]")


@dataclass
class _Job:
    key: tuple  # (point, label)
    pipeline: PipelineConfig
    benchmark: Benchmark
    eval_cfg: EvalConfig


def _run_job(job: _Job) -> SeedResult:
    """Train and evaluate one (model, seed); runs in a worker process when jobs > 1."""
    timer = Timer(f"{job.pipeline.model}_seed{job.pipeline.seed}")
    forecaster = train_forecaster(job.pipeline, job.benchmark, timer)
    with timer.section("evaluate"):
        result = evaluate_forecaster(
            forecaster,
            job.benchmark,
            job.eval_cfg.split,
            job.eval_cfg.factual_only,
            job.eval_cfg.anchor_stride,
        )
    effects = result.crmse
    return SeedResult(
        seed=job.pipeline.seed,
        rmse=finite_or_none(result.rmse),
        crmse=finite_or_none(effects.values) if effects is not None else None,
        crmse_used=effects.used if effects is not None else 0,
        crmse_skipped=effects.skipped if effects is not None else 0,
    )


def _pipeline(model: str, seed: int, out_dir: Path | None, template: dict[str, Any], **options) -> PipelineConfig:
    merged = {**template}
    for key in ("model_options", "train_options"):
        merged[key] = {**template.get(key, {}), **options.get(key, {})}
    return PipelineConfig(model=model, seed=seed, out_dir=str(out_dir) if out_dir else None, **merged)


def _benchmark_hash(benchmark: Benchmark) -> str:
    return benchmark.meta.get("config_hash") or config_hash(benchmark.meta)


def _aggregate(jobs: list[_Job], results: list[SeedResult], points: dict) -> list[ExperimentReport]:
    """Group seed results by (point, label) in job order."""
    grouped: dict[tuple, list[SeedResult]] = {}
    for job, result in zip(jobs, results):
        grouped.setdefault(job.key, []).append(result)
    reports = []
    for key, seed_results in grouped.items():
        point, label = key
        axis, axis_value, benchmark = points[point]
        meta = {"split": jobs[0].eval_cfg.split, "factual_only": jobs[0].eval_cfg.factual_only}
        if seed_results[0].crmse is not None:
            meta["crmse_coverage"] = [
                r.crmse_used / (r.crmse_used + r.crmse_skipped) if r.crmse_used + r.crmse_skipped else None
                for r in seed_results
            ]
        reports.append(
            ExperimentReport.aggregate(label, seed_results, _benchmark_hash(benchmark), axis, axis_value, meta)
        )
    return reports


def run_seeds(
    benchmark: Benchmark,
    eval_cfg: EvalConfig,
    template: dict[str, Any] | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> list[ExperimentReport]:
    """Train and evaluate every configured model over every seed on one dataset."""
    template = template or {}
    out_dir = Path(out_dir) if out_dir else None
    job_list = [
        _Job((None, model), _pipeline(model, seed, out_dir, template), benchmark, eval_cfg)
        for model in eval_cfg.models
        for seed in eval_cfg.seeds
    ]
    results = parallel_map(_run_job, job_list, jobs)
    reports = _aggregate(job_list, results, {None: (None, None, benchmark)})
    return with_reserved(reports, benchmark.tau_max, eval_cfg.include_reserved and not eval_cfg.factual_only)


def omega_sweep(
    omegas: Sequence[int],
    dgp_cfg: DgpConfig,
    eval_cfg: EvalConfig,
    sizes: BenchmarkSizes | None = None,
    template: dict[str, Any] | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> list[ExperimentReport]:
    """One benchmark per confounding window (shared master seed), full train and eval on each."""
    template = template or {}
    out_dir = Path(out_dir) if out_dir else None
    points, job_list = {}, []
    for omega in omegas:
        point_dir = out_dir / f"omega_{omega}" if out_dir else None
        cfg = replace(dgp_cfg, omega=int(omega))
        benchmark = build_benchmark(cfg, sizes, point_dir / "data" if point_dir else None, jobs)
        points[omega] = ("omega", omega, benchmark)
        job_list += [
            _Job((omega, model), _pipeline(model, seed, point_dir, template), benchmark, eval_cfg)
            for model in eval_cfg.models
            for seed in eval_cfg.seeds
        ]
    logger.info("Omega sweep: %d points x %d models x %d seeds", len(omegas), len(eval_cfg.models), len(eval_cfg.seeds))
    reports = _aggregate(job_list, parallel_map(_run_job, job_list, jobs), points)
    if out_dir is not None:
        write_reports(reports, out_dir, "omega_sweep")
        write_series(reports, out_dir / "omega_sweep_series.json")
    return reports


def crash_units(benchmark: Benchmark, split: str = "train") -> tuple[list[int], list[int]]:
    """Positions of units with at least one crash, and of crash-free units."""
    crashed, clean = [], []
    for i, unit in enumerate(benchmark.units(split)):
        (crashed if unit.t.any() else clean).append(i)
    return crashed, clean


def _feasible_size(ratio: float, crashed: int, clean: int) -> int:
    limits = [crashed + clean]
    if ratio > 0:
        limits.append(int(np.floor(crashed / ratio + 1e-9)))
    if ratio < 1:
        limits.append(int(np.floor(clean / (1 - ratio) + 1e-9)))
    return min(limits)


def subsample_crash_ratio(benchmark: Benchmark, ratio: float, size: int, seed: int = 0) -> Benchmark:
    """Training split resampled to ``size`` units of which ``round(ratio * size)`` contain a crash."""
    crashed, clean = crash_units(benchmark)
    n_crash = int(round(ratio * size))
    n_clean = size - n_crash
    if n_crash > len(crashed) or n_clean > len(clean):
        raise UsageError(
            f"crash ratio {ratio} at {size} units needs {n_crash} crash and {n_clean} crash-free units, "
            f"training split has {len(crashed)} and {len(clean)}"
        )
    rng = np.random.default_rng([seed, int(round(ratio * 1000))])
    picked = sorted(
        rng.choice(crashed, size=n_crash, replace=False).tolist() + rng.choice(clean, size=n_clean, replace=False).tolist()
    )
    train = benchmark.units("train")
    train_cf = benchmark.counterfactuals.get("train") or [{}] * len(train)
    meta = {**benchmark.meta, "crash_ratio": ratio, "train_size": size, "subsample_seed": seed}
    meta["config_hash"] = config_hash({k: v for k, v in meta.items() if k != "config_hash"})
    return Benchmark(
        meta,
        {**benchmark.splits, "train": [train[i] for i in picked]},
        {**benchmark.counterfactuals, "train": [train_cf[i] for i in picked]},
    )


def crash_ratio_sweep(
    ratios: Sequence[float],
    benchmark: Benchmark,
    eval_cfg: EvalConfig,
    sample_size: int | None = None,
    template: dict[str, Any] | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
    seed: int = 0,
) -> list[ExperimentReport]:
    """Per crash-sample ratio in the training split, train and evaluate every model.

    Without ``sample_size`` the largest size feasible for every ratio is used,
    so all points train on the same number of units.
    """
    template = template or {}
    out_dir = Path(out_dir) if out_dir else None
    crashed, clean = crash_units(benchmark)
    size = sample_size or min(_feasible_size(r, len(crashed), len(clean)) for r in ratios)
    if size < 1:
        raise UsageError(f"no training size reaches every ratio in {list(ratios)} ({len(crashed)} crash units)")
    points, job_list = {}, []
    for ratio in ratios:
        subset = subsample_crash_ratio(benchmark, ratio, size, seed)
        point_dir = out_dir / f"ratio_{ratio:g}" if out_dir else None
        points[ratio] = ("crash_ratio", ratio, subset)
        job_list += [
            _Job((ratio, model), _pipeline(model, s, point_dir, template), subset, eval_cfg)
            for model in eval_cfg.models
            for s in eval_cfg.seeds
        ]
    logger.info("Crash-ratio sweep: %d points at %d training units", len(ratios), size)
    reports = _aggregate(job_list, parallel_map(_run_job, job_list, jobs), points)
    if out_dir is not None:
        write_reports(reports, out_dir, "crash_ratio_sweep")
        write_series(reports, out_dir / "crash_ratio_sweep_series.json")
    return reports


def _resolve_dir(path: str | Path) -> Path:
    path = Path(path)
    if path.is_absolute() or path.exists():
        return path
    return PROJECT_ROOT / path


def load_variants(variants_dir: str | Path = "config/variants") -> list[VariantConfig]:
    """Ablation variants from ``*.yaml`` files, sorted by their ``order`` field."""
    directory = _resolve_dir(variants_dir)
    files = list_configs(directory)
    if not files:
        raise ConfigError("sweep.variants_dir", f"no variant files in {directory}")
    variants = []
    for path in files:
        try:
            variants.append(VariantConfig(**load_yaml(path)))
        except ValidationError as err:
            raise ConfigError(f"variant {path.name}", str(err)) from err
    return sorted(variants, key=lambda v: (v.order, v.name))


def ablation_suite(
    benchmark: Benchmark,
    eval_cfg: EvalConfig,
    variants: Sequence[VariantConfig] | None = None,
    template: dict[str, Any] | None = None,
    out_dir: str | Path | None = None,
    jobs: int = 1,
) -> list[ExperimentReport]:
    """MSCT and its ablated variants on one benchmark, one report row per variant."""
    template = template or {}
    variants = list(variants) if variants is not None else load_variants()
    out_dir = Path(out_dir) if out_dir else None
    job_list = []
    for variant in variants:
        overrides = variant.model.overrides()
        model = overrides.pop("name", "msct")
        point_dir = out_dir / variant.name if out_dir else None
        job_list += [
            _Job(
                (None, variant.label),
                _pipeline(
                    model,
                    seed,
                    point_dir,
                    template,
                    model_options=overrides,
                    train_options=variant.train.overrides(),
                ),
                benchmark,
                eval_cfg,
            )
            for seed in eval_cfg.seeds
        ]
    logger.info("Ablation suite: %s", ", ".join(v.label for v in variants))
    reports = _aggregate(job_list, parallel_map(_run_job, job_list, jobs), {None: (None, None, benchmark)})
    if out_dir is not None:
        write_reports(reports, out_dir, "ablation")
    return reports
