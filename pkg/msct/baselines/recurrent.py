"""Plain recurrent seq2seq forecasters (RNN, LSTM, GRU) trained on MSE only.

The encoder cell reads the same per-step inputs as the causal transformer,
the decoder cell continues from the encoder state at the anchor and is fed
its own predictions at inference. There is no balancing of any kind.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from msct.data import Normalizer, SequenceBatch, factual_plans, make_batch, one_hot, strategy_plans
from msct.dgp.config import InterventionStrategy
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import ConfigError, DatasetError, HorizonRangeError, UsageError
from msct.layers.module import Module
from msct.layers.recurrent import CELLS, RecurrentOutput
from msct.logging_config import logger
from msct.models.checkpoint import read_container, write_container
from msct.models.msct import Head
from msct.tensor import ops
from msct.tensor.optim import Adam
from msct.tensor.tensor import Tensor, backward, no_grad, zero_grad
from msct.training.batching import decoder_anchor_range, iterate_minibatches
from msct.training.losses import loss_outcome
from msct.utils.json_utils import append_jsonl
from msct.utils.timing import Timer


@dataclass
class RecurrentConfig:
    cell: str = "lstm"
    d_x: int = 1
    d_s: int = 1
    k: int = 2
    d_h: int = 32
    dropout: float = 0.1
    tau_max: int = 5
    crash_class: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.cell not in CELLS:
            raise ConfigError("model.cell", f"expected one of {sorted(CELLS)}, got {self.cell!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("model.dropout", f"rate must lie in [0, 1), got {self.dropout}")
        if self.tau_max < 1 or self.d_h < 1:
            raise ConfigError("model", "tau_max and d_h must be >= 1")


class RecurrentForecaster(Module):
    def __init__(self, cfg: RecurrentConfig, normalizer: Normalizer | None = None):
        rng = np.random.default_rng(cfg.seed)
        cell = CELLS[cfg.cell]
        self.cfg = cfg
        self.encoder = cell(cfg.d_x + cfg.k + 1 + cfg.d_s, cfg.d_h, rng)
        self.decoder = cell(cfg.k + 1 + cfg.d_s, cfg.d_h, rng)
        self.head = Head(cfg.d_h + cfg.k, cfg.d_h, 1, rng)
        self.normalizer = normalizer or Normalizer.identity(cfg.d_x, cfg.d_s)

    @property
    def name(self) -> str:
        return f"{self.cfg.cell}-baseline"

    def _dropout(self) -> float:
        return self.cfg.dropout if self.training else 0.0

    def _outcome(self, h: Tensor, t_next: np.ndarray) -> Tensor:
        out = self.head(ops.concat([h, Tensor(t_next)], axis=-1))
        return ops.reshape(out, out.shape[:-1])

    @staticmethod
    def _carry(out: RecurrentOutput):
        return out.final if out.cells is not None else out.final[0]

    @staticmethod
    def state_at(out: RecurrentOutput, rows: np.ndarray, positions: np.ndarray):
        h = out.hidden[rows, positions]
        return h if out.cells is None else (h, out.cells[rows, positions])

    def encode(self, batch: SequenceBatch, t_next: np.ndarray | None = None, rng=None) -> tuple[RecurrentOutput, Tensor]:
        """Hidden states and one-step predictions for every position with a next treatment."""
        treatments = batch.treatments()
        if t_next is None:
            t_next = treatments[:, 1:]
        positions = t_next.shape[1]
        static = np.repeat(batch.s[:, None, :], positions, axis=1)
        inputs = np.concatenate(
            [batch.x[:, :positions], treatments[:, :positions], batch.y[:, :positions, None], static],
            axis=-1,
        )
        out = self.encoder(Tensor(inputs), dropout=self._dropout(), rng=rng)
        return out, self._outcome(out.hidden, t_next)

    def decode(self, state, t_in: np.ndarray, y_prev: np.ndarray, t_next: np.ndarray, s: np.ndarray, rng=None):
        n = t_in.shape[1]
        features = np.concatenate(
            [one_hot(t_in, self.cfg.k), y_prev[..., None], np.repeat(s[:, None, :], n, axis=1)],
            axis=-1,
        )
        out = self.decoder(Tensor(features), state=state, dropout=self._dropout(), rng=rng)
        return self._outcome(out.hidden, one_hot(t_next, self.cfg.k)), out

    def loss(self, batch: SequenceBatch, anchors: np.ndarray, rng=None) -> Tensor:
        """One-step encoder MSE plus teacher-forced decoder MSE from ``anchors``."""
        out, y_hat = self.encode(batch, rng=rng)
        rows = np.arange(len(batch))
        steps = anchors[:, None] + np.arange(1, self.cfg.tau_max + 1)[None, :]
        y_dec, _ = self.decode(
            self.state_at(out, rows, anchors),
            batch.classes[rows[:, None], steps],
            batch.y[rows[:, None], steps],
            batch.classes[rows[:, None], steps + 1],
            batch.s,
            rng=rng,
        )
        return ops.add(loss_outcome(y_hat, batch.y[:, 1:]), loss_outcome(y_dec, batch.y[rows[:, None], steps + 1]))

    # --- rollout -------------------------------------------------------------

    def rollout_plans(self, batch: SequenceBatch, anchors: np.ndarray, plans: np.ndarray) -> np.ndarray:
        if len(batch) != 1:
            raise UsageError("rollout works on a single unit")
        anchors = np.asarray(anchors, dtype=np.int64)
        if anchors.size == 0 or anchors.min() < 0 or anchors.max() >= batch.seq_len:
            raise HorizonRangeError(f"anchors outside [0, {batch.seq_len})")
        R, width = plans.shape
        k = self.cfg.k
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                factual_next = np.concatenate([batch.classes[:, 1:], np.zeros((1, 1), dtype=np.int64)], axis=1)
                out, _ = self.encode(batch, t_next=one_hot(factual_next, k))
                rows = np.zeros(R, dtype=np.int64)
                state = self.state_at(out, rows, anchors)
                preds = np.zeros((R, width))
                preds[:, 0] = self._outcome(out.hidden[rows, anchors], one_hot(plans[:, 0], k)).data
                s_rows = np.repeat(batch.s, R, axis=0)
                for j in range(1, width):
                    features = np.concatenate(
                        [one_hot(plans[:, j - 1], k), preds[:, j - 1, None], s_rows], axis=-1
                    )
                    step = self.decoder(Tensor(features[:, None, :]), state=state)
                    state = self._carry(step)
                    preds[:, j] = self._outcome(step.final[0], one_hot(plans[:, j], k)).data
        finally:
            self.train(was_training)
        return preds

    def rollout_unit(
        self,
        unit: TimeSeriesUnit,
        anchors: Sequence[int],
        strategies: Sequence[InterventionStrategy],
    ) -> np.ndarray:
        plans = strategy_plans(strategies, self.cfg.tau_max, self.cfg.crash_class)
        anchors = np.asarray(list(anchors), dtype=np.int64)
        S, A = len(plans), len(anchors)
        batch = make_batch([unit], self.normalizer, self.cfg.k)
        preds = self.rollout_plans(batch, np.repeat(anchors, S), np.tile(plans, (A, 1)))
        return self.normalizer.inverse_y(preds.reshape(A, S, plans.shape[1]))

    def predict_factual(self, unit: TimeSeriesUnit, anchors: Sequence[int], horizon: int) -> np.ndarray:
        anchors = np.asarray(list(anchors), dtype=np.int64)
        plans = factual_plans(unit, anchors, horizon, self.cfg.k)
        batch = make_batch([unit], self.normalizer, self.cfg.k)
        return self.normalizer.inverse_y(self.rollout_plans(batch, anchors, plans))


class RecurrentTrainer:
    """Single Adam over all parameters with early stopping on validation RMSE."""

    def __init__(
        self,
        model: RecurrentForecaster,
        epochs: int = 30,
        batch_size: int = 64,
        lr: float = 1e-3,
        patience: int = 10,
        seed: int = 0,
        log_path: str | Path | None = None,
        timer: Timer | None = None,
    ):
        if epochs < 0 or batch_size < 1 or patience < 1:
            raise ConfigError("train", "epochs >= 0, batch_size >= 1 and patience >= 1 required")
        self.model = model
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.rng = np.random.default_rng([seed, 2])
        self.optimizer = Adam(model.parameters(), lr=lr)
        self.log_path = Path(log_path) if log_path else None
        self.timer = timer or Timer("train")
        self.history: list[dict] = []

    def _anchors(self, n: int, seq_len: int, rng: np.random.Generator) -> np.ndarray:
        anchors = np.array(decoder_anchor_range(seq_len, self.model.cfg.tau_max))
        if anchors.size == 0:
            raise HorizonRangeError(f"tau_max={self.model.cfg.tau_max} leaves no anchors in length {seq_len}")
        return rng.choice(anchors, size=n)

    def val_rmse(self, val: SequenceBatch) -> float:
        model = self.model
        was_training = model.training
        model.eval()
        try:
            with no_grad():
                loss = model.loss(val, self._anchors(len(val), val.seq_len, np.random.default_rng(0)))
        finally:
            model.train(was_training)
        return float(np.sqrt(loss.item() / 2.0)) * model.normalizer.y_std

    def fit(self, train: SequenceBatch, val: SequenceBatch | None = None) -> list[dict]:
        if len(train) == 0:
            raise UsageError("recurrent baseline needs a non-empty training split")
        model = self.model
        model.train()
        params = model.parameters()
        best, stale, snapshot = np.inf, 0, None
        with self.timer.section(model.name):
            for epoch in range(1, self.epochs + 1):
                losses = []
                for index in iterate_minibatches(len(train), self.batch_size, self.rng):
                    chunk = train.take(index)
                    loss = model.loss(chunk, self._anchors(len(chunk), chunk.seq_len, self.rng), rng=self.rng)
                    zero_grad(params)
                    self.optimizer.step(backward(loss, params))
                    zero_grad(params)
                    losses.append(loss.item())
                val_rmse = self.val_rmse(val) if val is not None else None
                record = {"phase": model.name, "epoch": epoch, "l_y": float(np.mean(losses)), "val_rmse": val_rmse}
                self.history.append(record)
                if self.log_path is not None:
                    append_jsonl(self.log_path, record)
                logger.info("%s: epoch %d l_y=%.5f val_rmse=%s", model.name, epoch, record["l_y"], val_rmse)
                if val_rmse is None:
                    continue
                if val_rmse < best:
                    best, stale = val_rmse, 0
                    snapshot = [p.data.copy() for p in params]
                else:
                    stale += 1
                    if stale >= self.patience:
                        logger.info("%s: early stop at epoch %d", model.name, epoch)
                        break
        if snapshot is not None:
            for p, saved in zip(params, snapshot):
                p.data[...] = saved
        return self.history


def recurrent_forecaster(
    train: SequenceBatch,
    cfg: RecurrentConfig,
    normalizer: Normalizer,
    val: SequenceBatch | None = None,
    **trainer_kwargs,
) -> RecurrentForecaster:
    """Build and fit a recurrent baseline of ``cfg.cell`` on factual data."""
    model = RecurrentForecaster(cfg, normalizer)
    RecurrentTrainer(model, seed=cfg.seed, **trainer_kwargs).fit(train, val)
    return model


def save_recurrent(path: str | Path, model: RecurrentForecaster, extras: dict | None = None) -> Path:
    header = {
        "model": "recurrent",
        "config": asdict(model.cfg),
        "normalizer": model.normalizer.to_dict(),
        "extras": extras or {},
    }
    arrays = {f"param.{name}": p.data for name, p in model.named_parameters()}
    return write_container(path, header, arrays)


def load_recurrent(path: str | Path) -> tuple[RecurrentForecaster, dict]:
    header, arrays = read_container(path)
    if header.get("model") != "recurrent":
        raise DatasetError(f"{path} holds a '{header.get('model')}' model, not a recurrent baseline")
    model = RecurrentForecaster(RecurrentConfig(**header["config"]), Normalizer.from_dict(header["normalizer"]))
    for name, p in model.named_parameters():
        key = f"param.{name}"
        if key not in arrays or arrays[key].shape != p.shape:
            raise DatasetError(f"{path}: parameter {name} missing or misshapen")
        p.data[...] = arrays[key]
    return model, header["extras"]
