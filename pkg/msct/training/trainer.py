"""Three-step training: encoder, representation cache, decoder.

Each mini-batch gets two selective Adam updates. Update (a) steps the
representation, treatment pathway and PS head on ``L_y + lam * L_ps``;
update (b) steps the representation, outcome head and HPS head on
``L_y + lam * L_hps`` where ``L_hps`` pushes the HPS head towards the
uniform distribution. Groups outside an update stay bitwise unchanged.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from msct.data import SequenceBatch
from msct.errors import ConfigError, UsageError
from msct.logging_config import logger
from msct.models.msct import MsctModel
from msct.tensor.optim import AdamState, adam_step
from msct.tensor.tensor import Tensor, backward, no_grad, zero_grad
from msct.training.batching import (
    RepresentationCache,
    build_decoder_inputs,
    decoder_samples,
    iterate_minibatches,
    precompute_representations,
)
from msct.training.losses import (
    LossBreakdown,
    combine,
    loss_hps_confusion,
    loss_hps_true,
    loss_outcome,
    loss_ps,
)
from msct.utils.json_utils import append_jsonl
from msct.utils.timing import Timer

HPS_MODES = ("as-written", "alternating-true-label")
BALANCING_MODES = ("domain-confusion", "gradient-reversal", "off")


@dataclass
class TrainConfig:
    epochs: int = 30
    decoder_epochs: int | None = None
    batch_size: int = 64
    lr: float = 1e-3
    lam: float = 1.0
    dropout: float | None = None  # overrides the model's rate when set
    seed: int = 0
    hps_adversarial_mode: str = "as-written"
    balancing: str = "domain-confusion"
    ps_loss: bool = True
    outcome_in_update_a: bool = True
    patience: int = 10
    decoder_anchors_per_unit: int | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("train.lam", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size", "must be >= 1")
        if self.epochs < 0 or (self.decoder_epochs is not None and self.decoder_epochs < 0):
            raise ConfigError("train.epochs", "must be >= 0")
        if self.lr <= 0:
            raise ConfigError("train.lr", "must be positive")
        if self.hps_adversarial_mode not in HPS_MODES:
            raise ConfigError("train.hps_adversarial_mode", f"expected one of {HPS_MODES}")
        if self.balancing not in BALANCING_MODES:
            raise ConfigError("train.balancing", f"expected one of {BALANCING_MODES}")
        if self.patience < 1:
            raise ConfigError("train.patience", "must be >= 1")

    @property
    def effective_lam(self) -> float:
        return 0.0 if self.balancing == "off" else self.lam


@dataclass
class _PhaseOutput:
    """Differentiable pieces of one forward pass, independent of phase."""

    y_hat: Tensor
    y_true: np.ndarray
    ps: Tensor | None
    hps: Tensor | None
    classes: np.ndarray


class MsctTrainer:
    def __init__(
        self,
        model: MsctModel,
        cfg: TrainConfig,
        log_path: str | Path | None = None,
        timer: Timer | None = None,
        on_epoch: Callable[["MsctTrainer", str, int], None] | None = None,
    ):
        self.model = model
        self.on_epoch = on_epoch
        self.cfg = cfg
        self.log_path = Path(log_path) if log_path else None
        self.timer = timer or Timer("train")
        self.rng = np.random.default_rng([cfg.seed, 1])
        self.optimizers = {name: AdamState(lr=cfg.lr) for name in model.parameter_groups()}
        self.epochs_done = {"encoder": 0, "decoder": 0}
        self.history: list[dict] = []
        self.best = {"encoder": np.inf, "decoder": np.inf}
        self.stale = {"encoder": 0, "decoder": 0}
        self.finished = {"encoder": False, "decoder": False}
        if cfg.dropout is not None:
            model.cfg.dropout = cfg.dropout
            for module in model.modules():
                if hasattr(module, "cfg") and hasattr(module.cfg, "dropout"):
                    module.cfg.dropout = cfg.dropout
        model.check_partition()

    # --- update machinery --------------------------------------------------

    def _step(self, loss: Tensor, stack: str, groups: tuple[str, ...]) -> None:
        """Backprop ``loss`` and Adam-step only the named groups of ``stack``."""
        all_groups = self.model.parameter_groups()
        zero_grad(self.model.parameters())
        names = [f"{stack}.{g}" for g in groups if all_groups[f"{stack}.{g}"]]
        params = [p for name in names for p in all_groups[name]]
        if not params:
            return
        grads = backward(loss, params)
        offset = 0
        for name in names:
            count = len(all_groups[name])
            adam_step(all_groups[name], grads[offset : offset + count], self.optimizers[name])
            offset += count
        zero_grad(self.model.parameters())

    def _train_batch(self, forward: Callable[..., _PhaseOutput], stack: str) -> LossBreakdown:
        cfg = self.cfg
        lam = cfg.effective_lam
        parts = LossBreakdown(lam=lam)

        if cfg.balancing == "gradient-reversal":
            out = forward(reversal=lam)
            l_y = loss_outcome(out.y_hat, out.y_true)
            l_ps = loss_ps(out.ps, out.classes) if out.ps is not None and cfg.ps_loss else None
            l_hps = loss_hps_true(out.hps, out.classes) if out.hps is not None else None
            loss = combine(l_y, lam, l_ps)
            if l_hps is not None:
                # reversal already scales what reaches the representation
                loss = combine(loss, 1.0, l_hps)
            self._step(loss, stack, ("theta_R", "theta_Y", "theta_T", "theta_PS", "theta_HPS"))
            parts.l_y = l_y.item()
            parts.l_ps = l_ps.item() if l_ps is not None else 0.0
            parts.l_hps = l_hps.item() if l_hps is not None else 0.0
            return parts

        # (a) representation + treatment pathway + PS head
        out = forward()
        l_y = loss_outcome(out.y_hat, out.y_true)
        l_ps = loss_ps(out.ps, out.classes) if out.ps is not None and cfg.ps_loss else None
        if cfg.outcome_in_update_a or l_ps is None:
            loss_a = combine(l_y, lam, l_ps)
        else:
            loss_a = combine(Tensor(0.0), lam, l_ps)
        self._step(loss_a, stack, ("theta_R", "theta_T", "theta_PS"))

        # (b) representation + outcome head + HPS head towards uniform
        out = forward()
        l_y_b = loss_outcome(out.y_hat, out.y_true)
        l_hps = loss_hps_confusion(out.hps) if out.hps is not None else None
        self._step(combine(l_y_b, lam, l_hps), stack, ("theta_R", "theta_Y", "theta_HPS"))

        if cfg.hps_adversarial_mode == "alternating-true-label" and out.hps is not None and lam > 0:
            out = forward()
            self._step(loss_hps_true(out.hps, out.classes), stack, ("theta_HPS",))

        parts.l_y = l_y.item()
        parts.l_ps = l_ps.item() if l_ps is not None else 0.0
        parts.l_hps = l_hps.item() if l_hps is not None else 0.0
        return parts

    # --- early stopping ----------------------------------------------------

    def _record(self, phase: str, epoch: int, parts: list[LossBreakdown], val_rmse: float | None) -> None:
        mean = LossBreakdown(
            l_y=float(np.mean([p.l_y for p in parts])),
            l_ps=float(np.mean([p.l_ps for p in parts])),
            l_hps=float(np.mean([p.l_hps for p in parts])),
            lam=self.cfg.effective_lam,
        )
        record = {"phase": phase, "epoch": epoch, **mean.to_dict(), "val_rmse": val_rmse}
        self.history.append(record)
        if self.log_path is not None:
            append_jsonl(self.log_path, record)
        logger.info(
            "%s: epoch %d l_y=%.5f l_ps=%.5f l_hps=%.5f val_rmse=%s",
            phase,
            epoch,
            mean.l_y,
            mean.l_ps,
            mean.l_hps,
            "n/a" if val_rmse is None else f"{val_rmse:.4f}",
        )

    def _improved(self, phase: str, val_rmse: float | None, snapshot: dict) -> bool:
        """Track the best epoch; returns False once patience runs out."""
        if val_rmse is None:
            return True
        if val_rmse < self.best[phase]:
            self.best[phase] = val_rmse
            self.stale[phase] = 0
            snapshot["params"] = [p.data.copy() for p in self.model.parameters()]
            return True
        self.stale[phase] += 1
        return self.stale[phase] < self.cfg.patience

    def _restore(self, snapshot: dict) -> None:
        if "params" in snapshot:
            for p, saved in zip(self.model.parameters(), snapshot["params"]):
                p.data[...] = saved

    # --- phases ------------------------------------------------------------

    def train_encoder(self, train: SequenceBatch, val: SequenceBatch | None = None) -> list[dict]:
        if len(train) == 0:
            raise UsageError("train_encoder needs a non-empty training split")
        if self.finished["encoder"]:
            return [r for r in self.history if r["phase"] == "encoder"]
        self.model.train()
        snapshot: dict = {}
        start = self.epochs_done["encoder"]
        with self.timer.section("encoder"):
            for epoch in range(start + 1, self.cfg.epochs + 1):
                parts = []
                for index in iterate_minibatches(len(train), self.cfg.batch_size, self.rng):
                    chunk = train.take(index)

                    def forward(reversal=None, chunk=chunk):
                        out = self.model.encode(chunk, rng=self.rng, reversal=reversal)
                        return _PhaseOutput(out.y_hat, chunk.y[:, 1:], out.ps, out.hps, chunk.classes[:, 1:])

                    parts.append(self._train_batch(forward, "encoder"))
                val_rmse = self.encoder_val_rmse(val) if val is not None else None
                self.epochs_done["encoder"] = epoch
                self._record("encoder", epoch, parts, val_rmse)
                if not self._improved("encoder", val_rmse, snapshot):
                    logger.info("encoder: early stop at epoch %d", epoch)
                    self.finished["encoder"] = True
                if self.on_epoch is not None:
                    self.on_epoch(self, "encoder", epoch)
                if self.finished["encoder"]:
                    break
        self._restore(snapshot)
        return [r for r in self.history if r["phase"] == "encoder"]

    def encoder_val_rmse(self, val: SequenceBatch) -> float:
        """One-step factual RMSE in outcome units."""
        cache = precompute_representations(val, self.model)
        err = (cache.y_hat - val.y[:, 1:]) * self.model.normalizer.y_std
        return float(np.sqrt(np.mean(err**2)))

    def precompute(self, batch: SequenceBatch) -> RepresentationCache:
        with self.timer.section("cache"):
            return precompute_representations(batch, self.model)

    def train_decoder(
        self,
        train: SequenceBatch,
        cache: RepresentationCache,
        val: SequenceBatch | None = None,
        val_cache: RepresentationCache | None = None,
    ) -> list[dict]:
        cfg = self.cfg
        tau_max = self.model.cfg.tau_max
        if len(train) == 0:
            raise UsageError("train_decoder needs a non-empty training split")
        if self.finished["decoder"]:
            return [r for r in self.history if r["phase"] == "decoder"]
        self.model.train()
        epochs = cfg.decoder_epochs if cfg.decoder_epochs is not None else cfg.epochs
        pairs = decoder_samples(len(train), train.seq_len, tau_max, self.rng, cfg.decoder_anchors_per_unit)
        snapshot: dict = {}
        start = self.epochs_done["decoder"]
        with self.timer.section("decoder"):
            for epoch in range(start + 1, epochs + 1):
                parts = []
                for index in iterate_minibatches(len(pairs), cfg.batch_size, self.rng):
                    inputs, y_true, classes = build_decoder_inputs(train, cache, pairs[index], tau_max)

                    def forward(reversal=None, inputs=inputs, y_true=y_true, classes=classes):
                        out = self.model.decode(inputs, rng=self.rng, reversal=reversal)
                        return _PhaseOutput(out.y_hat, y_true, out.ps, out.hps, classes)

                    parts.append(self._train_batch(forward, "decoder"))
                val_rmse = None
                if val is not None:
                    val_rmse = self.decoder_val_rmse(val, val_cache or precompute_representations(val, self.model))
                self.epochs_done["decoder"] = epoch
                self._record("decoder", epoch, parts, val_rmse)
                if not self._improved("decoder", val_rmse, snapshot):
                    logger.info("decoder: early stop at epoch %d", epoch)
                    self.finished["decoder"] = True
                if self.on_epoch is not None:
                    self.on_epoch(self, "decoder", epoch)
                if self.finished["decoder"]:
                    break
        self._restore(snapshot)
        return [r for r in self.history if r["phase"] == "decoder"]

    def decoder_val_rmse(self, val: SequenceBatch, cache: RepresentationCache) -> float:
        """Teacher-forced RMSE over horizons 2..tau_max+1 in outcome units."""
        tau_max = self.model.cfg.tau_max
        pairs = decoder_samples(len(val), val.seq_len, tau_max, np.random.default_rng(0))
        was_training = self.model.training
        self.model.eval()
        errors = []
        try:
            with no_grad():
                for start in range(0, len(pairs), 512):
                    inputs, y_true, _ = build_decoder_inputs(val, cache, pairs[start : start + 512], tau_max)
                    errors.append((self.model.decode(inputs).y_hat.data - y_true).ravel())
        finally:
            self.model.train(was_training)
        err = np.concatenate(errors) * self.model.normalizer.y_std
        return float(np.sqrt(np.mean(err**2)))

    def fit(self, train: SequenceBatch, val: SequenceBatch | None = None) -> list[dict]:
        """Encoder training, the representation cache, then decoder training."""
        self.train_encoder(train, val)
        cache = self.precompute(train)
        val_cache = self.precompute(val) if val is not None else None
        self.train_decoder(train, cache, val, val_cache)
        return self.history

    # --- resume ------------------------------------------------------------

    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        """JSON-able trainer state plus optimizer moment arrays for a checkpoint."""
        arrays = {}
        optimizers = {}
        for name, state in self.optimizers.items():
            optimizers[name] = {
                "lr": state.lr,
                "beta1": state.beta1,
                "beta2": state.beta2,
                "eps": state.eps,
                "step": state.step,
                "moments": len(state.m),
            }
            for i, (m, v) in enumerate(zip(state.m, state.v)):
                arrays[f"adam.{name}.m.{i}"] = m
                arrays[f"adam.{name}.v.{i}"] = v
        extras = {
            "train_config": asdict(self.cfg),
            "epochs_done": dict(self.epochs_done),
            "best": {k: (None if np.isinf(v) else v) for k, v in self.best.items()},
            "stale": dict(self.stale),
            "finished": dict(self.finished),
            "optimizers": optimizers,
            "rng_state": copy.deepcopy(self.rng.bit_generator.state),
            "history": list(self.history),
        }
        return extras, arrays

    def load_state(self, extras: dict, arrays: dict[str, np.ndarray]) -> None:
        self.epochs_done = dict(extras["epochs_done"])
        self.best = {k: (np.inf if v is None else v) for k, v in extras["best"].items()}
        self.stale = dict(extras["stale"])
        self.finished = dict(extras.get("finished", self.finished))
        self.history = list(extras.get("history", []))
        self.rng.bit_generator.state = extras["rng_state"]
        for name, meta in extras["optimizers"].items():
            self.optimizers[name] = AdamState.from_dict(
                {
                    **{key: meta[key] for key in ("lr", "beta1", "beta2", "eps", "step")},
                    "m": [arrays[f"adam.{name}.m.{i}"] for i in range(meta["moments"])],
                    "v": [arrays[f"adam.{name}.v.{i}"] for i in range(meta["moments"])],
                }
            )
        logger.info("Resumed training at %s", self.epochs_done)


def train_encoder(train: SequenceBatch, model: MsctModel, cfg: TrainConfig, val=None) -> MsctModel:
    MsctTrainer(model, cfg).train_encoder(train, val)
    return model


def train_decoder(train: SequenceBatch, cached: RepresentationCache, model: MsctModel, cfg: TrainConfig, val=None) -> MsctModel:
    MsctTrainer(model, cfg).train_decoder(train, cached, val)
    return model


def gradient_reversal_variant(train: SequenceBatch, model: MsctModel, cfg: TrainConfig, val=None) -> MsctModel:
    """Full training with the HPS head fitted on true labels through a reversal layer."""
    cfg = TrainConfig(**{**asdict(cfg), "balancing": "gradient-reversal"})
    MsctTrainer(model, cfg).fit(train, val)
    return model
