"""Command-line entry point: ``msct <command> [--config run.yaml] [flags]``.

Commands: generate | ingest | train | evaluate | sweep | ablate. Every command
writes ``resolved_config.yaml`` beside its outputs and a separate
``metadata.json`` with wall-clock timestamps and phase timings.

Exit codes: 0 on success, 2 on a configuration error, 1 on a runtime error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from pydantic import ValidationError

from msct.dgp.benchmark import Benchmark, build_benchmark, load_benchmark
from msct.dgp.config import BenchmarkSizes, DgpConfig
from msct.errors import ConfigError, MsctError
from msct.eval.diagnostics import assumption_diagnostics, probe_balance
from msct.eval.evaluate import real_data_traces, treatment_awareness, treatment_response_curves
from msct.eval.harness import (
    EvalConfig,
    SweepConfig,
    ablation_suite,
    crash_ratio_sweep,
    load_variants,
    omega_sweep,
    run_seeds,
)
from msct.eval.report import upsert_summary, write_reports, write_tables
from msct.ingest import IngestConfig, ingest_csv
from msct.logging_config import logger
from msct.pipelines.pipeline import PipelineConfig, load_forecaster, train_forecaster
from msct.schemas import RunConfig
from msct.utils.config_utils import dump_yaml, load_yaml
from msct.utils.json_utils import write_json
from msct.utils.timing import Timer

COMMANDS = ("generate", "ingest", "train", "evaluate", "sweep", "ablate")
MSM_KEYS = ("name", "msm_window", "msm_cap_percentile")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msct", description="Counterfactual post-crash traffic speed lab")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="Run configuration YAML")
    parser.add_argument("--seed", type=int, help="Master seed (overrides the config)")
    parser.add_argument("--jobs", type=int, help="Parallel worker processes")
    parser.add_argument("--out", help="Output directory")
    parser.add_argument("--data", help="Dataset directory (train/evaluate/sweep/ablate)")
    parser.add_argument("--csv", help="Detector CSV (ingest)")
    parser.add_argument("--model", help="Model name, e.g. msct or lstm-baseline")
    parser.add_argument("--omega", type=int, help="Confounding window (generate)")
    parser.add_argument(
        "--axis",
        choices=("omega", "crash_ratio"),
        default="omega",
        help="Sweep axis (sweep)",
    )
    parser.add_argument("--resume", action="store_true", help="Continue from existing checkpoints")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    return parser


def load_run_config(args: argparse.Namespace) -> RunConfig:
    """The YAML run config (or defaults) with command-line overrides applied."""
    payload = load_yaml(args.config) if args.config else {}
    run = RunConfig.model_validate(payload)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    run = run.model_copy(update=updates)
    if args.out:
        run.paths = run.paths.model_copy(update={"out_dir": args.out})
    if args.data:
        run.paths = run.paths.model_copy(update={"data_dir": args.data})
    if args.model:
        run.model = run.model.model_copy(update={"name": args.model})
        run.eval = run.eval.model_copy(update={"models": [args.model]})
    if args.omega is not None:
        run.dgp = run.dgp.model_copy(update={"omega": args.omega})
    if args.csv:
        run.ingest = run.ingest.model_copy(update={"csv": args.csv})
    # Re-validate so flag values go through the same field checks
    return RunConfig.model_validate(run.model_dump())


# --- section -> module config ------------------------------------------------


def dgp_config(run: RunConfig) -> tuple[DgpConfig, BenchmarkSizes]:
    options = {k: v for k, v in run.dgp.model_dump(exclude_none=True).items() if k != "sizes"}
    return DgpConfig(**options, seed=run.seed), BenchmarkSizes(**run.dgp.sizes.model_dump())


def eval_config(run: RunConfig) -> EvalConfig:
    return EvalConfig(**run.eval.model_dump())


def pipeline_template(run: RunConfig, resume: bool) -> dict:
    model = run.model.model_dump(exclude_none=True)
    return {
        "data_dir": run.paths.data_dir,
        "model_options": {k: v for k, v in model.items() if k not in MSM_KEYS},
        "train_options": run.train.model_dump(exclude_none=True),
        "msm_window": run.model.msm_window,
        "msm_cap_percentile": run.model.msm_cap_percentile,
        "resume": resume,
    }


def _out_dir(run: RunConfig, command: str) -> Path:
    return Path(run.paths.out_dir or Path("runs") / command)


def _data_dir(run: RunConfig) -> Path:
    if not run.paths.data_dir:
        raise ConfigError("paths.data_dir", "a dataset directory is required (set it or pass --data)")
    return Path(run.paths.data_dir)


def _benchmark(run: RunConfig) -> Benchmark:
    return load_benchmark(_data_dir(run))


# --- commands ----------------------------------------------------------------


def cmd_generate(run: RunConfig, args, timer: Timer) -> Path:
    cfg, sizes = dgp_config(run)
    out = Path(args.out or run.paths.data_dir or "data/benchmark")
    with timer.section("generate"):
        build_benchmark(cfg, sizes, out, run.jobs)
    return out


def cmd_ingest(run: RunConfig, args, timer: Timer) -> Path:
    if not run.ingest.csv:
        raise ConfigError("ingest.csv", "an input CSV is required (set it or pass --csv)")
    cfg = IngestConfig(**{k: v for k, v in run.ingest.model_dump().items() if k != "csv"})
    out = Path(args.out or run.paths.data_dir or "data/real")
    with timer.section("ingest"):
        ingest_csv(run.ingest.csv, out, cfg)
    return out


def cmd_train(run: RunConfig, args, timer: Timer) -> Path:
    benchmark = _benchmark(run)
    out = _out_dir(run, "train")
    template = pipeline_template(run, args.resume)
    cfg = PipelineConfig(model=run.model.name, seed=run.seed, out_dir=str(out), checkpoint_file=run.paths.checkpoint, **template)
    train_forecaster(cfg, benchmark, timer)
    return out


def _plot_data(run: RunConfig, benchmark: Benchmark, eval_cfg: EvalConfig, out: Path) -> dict:
    """Response curves (synthetic) or traces (real), treatment awareness and the balance probe."""
    diagnostics: dict = {"awareness": {}, "probe": {}}
    template = pipeline_template(run, resume=True)
    for name in eval_cfg.models:
        cfg = PipelineConfig(model=name, seed=eval_cfg.seeds[0], out_dir=str(out), **template)
        forecaster = load_forecaster(cfg, benchmark)
        units = benchmark.units(eval_cfg.split)
        if benchmark.kind == "synthetic" and not eval_cfg.factual_only:
            curves = [
                curve
                for index in eval_cfg.curve_units
                if index < len(units)
                for curve in treatment_response_curves(forecaster, benchmark, eval_cfg.split, index)
            ]
            write_json(out / "plots" / f"{name}_response_curves.json", curves)
        else:
            indices = [i for i in eval_cfg.curve_units if i < len(units)]
            traces = real_data_traces(forecaster, units, indices, benchmark.tau_max)
            write_json(out / "plots" / f"{name}_traces.json", traces)
        diagnostics["awareness"][name] = treatment_awareness(forecaster, units, benchmark.tau_max, eval_cfg.anchor_stride)
        if cfg.kind == "msct":
            diagnostics["probe"][name] = probe_balance(forecaster, units, seed=run.seed).to_dict()
    return diagnostics


def cmd_evaluate(run: RunConfig, args, timer: Timer) -> Path:
    benchmark = _benchmark(run)
    eval_cfg = eval_config(run)
    out = _out_dir(run, "evaluate")
    # Existing checkpoints are reused; missing ones are trained first
    template = pipeline_template(run, resume=True)
    with timer.section("evaluate"):
        reports = run_seeds(benchmark, eval_cfg, template, out, run.jobs)
    write_reports(reports, out / "reports", "evaluation")
    write_tables(reports, out / "reports", "evaluation")
    upsert_summary(reports, out / "reports" / "summary.csv")
    with timer.section("diagnostics"):
        diagnostics = _plot_data(run, benchmark, eval_cfg, out)
        diagnostics["assumptions"] = assumption_diagnostics(benchmark, eval_cfg.split, run.model.msm_window)
    write_json(out / "reports" / "diagnostics.json", diagnostics)
    return out


def cmd_sweep(run: RunConfig, args, timer: Timer) -> Path:
    eval_cfg = eval_config(run)
    sweep_cfg = SweepConfig(**run.sweep.model_dump())
    out = _out_dir(run, "sweep")
    template = pipeline_template(run, args.resume)
    with timer.section(f"sweep.{args.axis}"):
        if args.axis == "omega":
            cfg, sizes = dgp_config(run)
            omega_sweep(sweep_cfg.omegas, cfg, eval_cfg, sizes, template, out, run.jobs)
        else:
            crash_ratio_sweep(
                sweep_cfg.crash_ratios,
                _benchmark(run),
                eval_cfg,
                sweep_cfg.ratio_sample_size,
                template,
                out,
                run.jobs,
                seed=run.seed,
            )
    return out


def cmd_ablate(run: RunConfig, args, timer: Timer) -> Path:
    benchmark = _benchmark(run)
    eval_cfg = eval_config(run)
    sweep_cfg = SweepConfig(**run.sweep.model_dump())
    out = _out_dir(run, "ablate")
    variants = load_variants(sweep_cfg.variants_dir)
    with timer.section("ablate"):
        reports = ablation_suite(benchmark, eval_cfg, variants, pipeline_template(run, args.resume), out, run.jobs)
    write_tables(reports, out, "ablation")
    return out


HANDLERS = {
    "generate": cmd_generate,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def run_command(args: argparse.Namespace) -> Path:
    run = load_run_config(args)
    timer = Timer(args.command)
    started = datetime.now(timezone.utc)
    start = time.perf_counter()
    out = HANDLERS[args.command](run, args, timer)
    dump_yaml(out / "resolved_config.yaml", run.model_dump(mode="json"))
    write_json(
        out / "metadata.json",
        {
            "command": args.command,
            "started_at": started.isoformat(),
            "finished_at": datetime.now(timezone.utc).isoformat(),
            "duration_seconds": time.perf_counter() - start,
            "timings": timer.get_summary(),
        },
    )
    logger.debug(timer.format_summary())
    logger.info("%s finished, outputs in %s", args.command, out)
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logger.setLevel(logging.DEBUG)
    try:
        run_command(args)
    except ValidationError as err:
        logger.error("Invalid configuration:\n%s", err)
        return 2
    except ConfigError as err:
        logger.error("Invalid configuration: %s", err)
        return 2
    except (MsctError, OSError) as err:
        logger.error("%s failed: %s", args.command, err)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
