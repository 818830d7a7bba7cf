from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from msct.baselines.msm import MsmForecaster
from msct.baselines.naive import NaiveForecaster
from msct.baselines.recurrent import (
    RecurrentConfig,
    load_recurrent,
    recurrent_forecaster,
    save_recurrent,
)
from msct.data import Normalizer, make_batch
from msct.dgp.benchmark import Benchmark
from msct.errors import ConfigError, DatasetError
from msct.eval.evaluate import EvalResult, Forecaster, evaluate, evaluate_factual
from msct.logging_config import logger
from msct.models import MsctConfig, MsctModel, resolve_model
from msct.models.checkpoint import load_checkpoint, read_container, save_checkpoint
from msct.training.trainer import MsctTrainer, TrainConfig
from msct.utils.file_paths import construct_file_path
from msct.utils.timing import Timer

CHECKPOINT_SUFFIX = {"msct": "ckpt", "recurrent": "ckpt", "msm": "json"}


@dataclass
class PipelineConfig:
    """One (model, seed) run on one dataset.

    Supports smart defaults: given ``out_dir``, the checkpoint, training log
    and report directory are derived from it and prefixed with the model name
    and seed. Any explicitly set path wins over its default.
    """

    model: str = "msct"
    seed: int = 0
    data_dir: str | None = None
    out_dir: str | None = None

    checkpoint_file: str | None = None
    train_log_file: str | None = None
    report_dir: str | None = None

    # Section overrides, keyed by dataclass field name
    model_options: dict[str, Any] = field(default_factory=dict)
    train_options: dict[str, Any] = field(default_factory=dict)
    msm_window: int = 5
    msm_cap_percentile: float = 99.0
    resume: bool = False

    def __post_init__(self):
        self.kind, options = resolve_model(self.model)
        self.model_options = {**options, **self.model_options}
        if self.out_dir:
            base = Path(self.out_dir)
            suffix = CHECKPOINT_SUFFIX.get(self.kind)
            if self.checkpoint_file is None and suffix:
                self.checkpoint_file = str(construct_file_path(base / "checkpoints" / f"model.{suffix}", self.model, self.seed))
            if self.train_log_file is None and self.kind in ("msct", "recurrent"):
                self.train_log_file = str(construct_file_path(base / "logs" / "train.jsonl", self.model, self.seed))
            if self.report_dir is None:
                self.report_dir = str(base / "reports")

    def train_config(self) -> TrainConfig:
        return TrainConfig(**{**_known(TrainConfig, self.train_options), "seed": self.seed})


def _known(cls, options: dict) -> dict:
    """The subset of ``options`` that names fields of dataclass ``cls``."""
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in options.items() if k in names and v is not None}


def _dims(benchmark: Benchmark) -> dict:
    train = benchmark.units("train")
    if not train:
        raise DatasetError("training split is empty")
    return {
        "d_x": train[0].x.shape[1],
        "d_s": len(train[0].s),
        "k": benchmark.num_classes,
        "tau_max": benchmark.tau_max,
    }


def _batches(benchmark: Benchmark, normalizer: Normalizer, k: int):
    train = make_batch(benchmark.units("train"), normalizer, k)
    val_units = benchmark.splits.get("val") or []
    val = make_batch(val_units, normalizer, k) if val_units else None
    return train, val


def _train_msct(cfg: PipelineConfig, benchmark: Benchmark, timer: Timer) -> MsctModel:
    checkpoint = Path(cfg.checkpoint_file) if cfg.checkpoint_file else None
    train_cfg = cfg.train_config()

    if cfg.resume and checkpoint is not None and checkpoint.exists():
        model, extras, arrays = load_checkpoint(checkpoint)
        trainer_state = extras.get("trainer")
    else:
        normalizer = Normalizer.fit(benchmark.units("train"))
        model_cfg = MsctConfig(**{**_known(MsctConfig, cfg.model_options), **_dims(benchmark), "seed": cfg.seed})
        model = MsctModel(model_cfg, normalizer)
        trainer_state, arrays = None, {}

    def on_epoch(trainer: MsctTrainer, phase: str, epoch: int) -> None:
        if checkpoint is not None:
            extras, state_arrays = trainer.state()
            save_checkpoint(checkpoint, trainer.model, {"trainer": extras}, state_arrays)

    trainer = MsctTrainer(model, train_cfg, log_path=cfg.train_log_file, timer=timer, on_epoch=on_epoch)
    if trainer_state is not None:
        trainer.load_state(trainer_state, arrays)
    train, val = _batches(benchmark, model.normalizer, model.cfg.k)
    trainer.fit(train, val)
    if checkpoint is not None:
        extras, state_arrays = trainer.state()
        save_checkpoint(checkpoint, model, {"trainer": extras}, state_arrays)
        logger.file("Saved checkpoint to %s", checkpoint)
    return model


def _train_recurrent(cfg: PipelineConfig, benchmark: Benchmark, timer: Timer):
    checkpoint = Path(cfg.checkpoint_file) if cfg.checkpoint_file else None
    if cfg.resume and checkpoint is not None and checkpoint.exists():
        model, _ = load_recurrent(checkpoint)
        logger.info("Loaded finished %s from %s", model.name, checkpoint)
        return model
    normalizer = Normalizer.fit(benchmark.units("train"))
    dims = _dims(benchmark)
    rec_cfg = RecurrentConfig(**{**_known(RecurrentConfig, cfg.model_options), **dims, "seed": cfg.seed})
    train, val = _batches(benchmark, normalizer, dims["k"])
    train_cfg = cfg.train_config()
    model = recurrent_forecaster(
        train,
        rec_cfg,
        normalizer,
        val,
        epochs=train_cfg.epochs,
        batch_size=train_cfg.batch_size,
        lr=train_cfg.lr,
        patience=train_cfg.patience,
        log_path=cfg.train_log_file,
        timer=timer,
    )
    if checkpoint is not None:
        save_recurrent(checkpoint, model, {"train_config": asdict(train_cfg)})
        logger.file("Saved checkpoint to %s", checkpoint)
    return model


def _train_msm(cfg: PipelineConfig, benchmark: Benchmark, timer: Timer) -> MsmForecaster:
    if cfg.resume and cfg.checkpoint_file and Path(cfg.checkpoint_file).exists():
        return MsmForecaster.load(cfg.checkpoint_file)
    forecaster = MsmForecaster(
        tau_max=benchmark.tau_max,
        window=cfg.msm_window,
        cap_percentile=cfg.msm_cap_percentile,
        crash_class=cfg.model_options.get("crash_class") or 1,
    )
    with timer.section("msm"):
        forecaster.fit(benchmark.units("train"))
    if cfg.checkpoint_file:
        forecaster.save(cfg.checkpoint_file)
        logger.file("Saved MSM coefficients to %s", cfg.checkpoint_file)
    return forecaster


def train_forecaster(cfg: PipelineConfig, benchmark: Benchmark, timer: Timer | None = None) -> Forecaster:
    """Fit the configured model on the training split and persist it."""
    timer = timer or Timer("train")
    logger.info("Training %s (seed %d) on %d units", cfg.model, cfg.seed, len(benchmark.units("train")))
    if cfg.kind == "msct":
        return _train_msct(cfg, benchmark, timer)
    if cfg.kind == "recurrent":
        return _train_recurrent(cfg, benchmark, timer)
    if cfg.kind == "msm":
        return _train_msm(cfg, benchmark, timer)
    return NaiveForecaster(benchmark.tau_max).fit()


def load_forecaster(cfg: PipelineConfig, benchmark: Benchmark | None = None) -> Forecaster:
    """Load a trained model from its checkpoint (the naive forecaster needs none)."""
    if cfg.kind == "naive":
        return NaiveForecaster(benchmark.tau_max if benchmark is not None else 5)
    path = Path(cfg.checkpoint_file or "")
    if not path.is_file():
        raise ConfigError("paths.checkpoint", f"no checkpoint at '{path}'; train {cfg.model} first")
    if cfg.kind == "msm":
        return MsmForecaster.load(path)
    header, _ = read_container(path)
    if header.get("model") == "recurrent":
        return load_recurrent(path)[0]
    return load_checkpoint(path)[0]


def evaluate_forecaster(
    forecaster: Forecaster,
    benchmark: Benchmark,
    split: str = "test",
    factual_only: bool = False,
    anchor_stride: int = 1,
) -> EvalResult:
    """Counterfactual evaluation when the split carries expansions, factual otherwise."""
    has_cf = any(benchmark.counterfactuals.get(split) or [])
    if factual_only or not has_cf:
        if not factual_only:
            logger.info("Split '%s' has no counterfactuals; evaluating factually", split)
        return evaluate_factual(forecaster, benchmark.units(split), benchmark.tau_max, anchor_stride)
    return evaluate(forecaster, benchmark, split, anchor_stride)
