"""The causal transformer: encoder/decoder stacks of dual-pathway blocks and three heads.

Time convention: encoder position ``p`` reads ``(X_p, T_p, Y_p, S)`` and its
outcome head, given the next intervention ``T_{p+1}``, predicts ``Y_{p+1}``.
The propensity heads predict ``T_{p+1}``. Decoder position ``j`` of an
anchor ``t`` plays the same role for ``p = t + j``.

Every trainable tensor belongs to exactly one of five groups per stack:

* ``theta_R``: input map, backbone blocks, representation layer
* ``theta_Y``: outcome head
* ``theta_T``: treatment-history LSTM pathway (+ memory projection)
* ``theta_PS``: propensity head on the LSTM pathway
* ``theta_HPS``: historical propensity head on the representation
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from msct.data import Normalizer, SequenceBatch, factual_plans, make_batch, one_hot, strategy_plans
from msct.dgp.config import InterventionStrategy
from msct.dgp.simulate import TimeSeriesUnit
from msct.errors import HorizonRangeError, ShapeError, UsageError
from msct.layers.attention import AttentionConfig, positional_encoding
from msct.layers.module import Linear, Module
from msct.layers.recurrent import LSTM
from msct.layers.transformer import DecoderBlock, EncoderBlock
from msct.models.config import MsctConfig
from msct.tensor import ops
from msct.tensor.tensor import Tensor, no_grad

GROUPS = ("theta_R", "theta_Y", "theta_T", "theta_PS", "theta_HPS")


class Head(Module):
    """Linear -> ELU -> Linear."""

    def __init__(self, d_in: int, d_hidden: int, d_out: int, rng: np.random.Generator):
        self.hidden = Linear(d_in, d_hidden, rng)
        self.out = Linear(d_hidden, d_out, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(ops.elu(self.hidden(x)))


@dataclass
class EncoderOutput:
    phi: Tensor  # (B, P, d_h)
    y_hat: Tensor  # (B, P)
    ps: Tensor | None  # (B, P, K)
    hps: Tensor | None  # (B, P, K)
    memory: tuple[Tensor, Tensor] | None  # treatment-LSTM (h, c) per position
    backbone_memory: tuple[Tensor, Tensor] | None  # lstm backbone only


@dataclass
class DecoderInputs:
    t_in: np.ndarray  # (B, n) class of the treatment that produced y_prev
    y_lag: np.ndarray  # (B, n) outcome one step before y_prev
    y_prev: np.ndarray  # (B, n) latest (predicted or teacher-forced) outcome
    t_next: np.ndarray  # (B, n) intervention for the predicted step
    s: np.ndarray  # (B, d_s)
    anchors: np.ndarray  # (B,)
    phi: Tensor  # (B, P, d_h) encoder representation
    memory: tuple[np.ndarray, np.ndarray] | None = None  # (B, d_h) each
    backbone_memory: tuple[np.ndarray, np.ndarray] | None = None


@dataclass
class DecoderOutput:
    phi: Tensor
    y_hat: Tensor  # (B, n)
    ps: Tensor | None
    hps: Tensor | None


class _Stack(Module):
    group_members: dict[str, tuple[str, ...]] = {
        "theta_R": ("input", "blocks", "representation", "backbone_memory"),
        "theta_Y": ("outcome_head",),
        "theta_T": ("treatment_lstms", "memory"),
        "theta_PS": ("ps_head",),
        "theta_HPS": ("hps_head",),
    }

    def __init__(self, cfg: MsctConfig, d_in: int, rng: np.random.Generator, decoder: bool):
        self.cfg = cfg
        attention = AttentionConfig(cfg.d_h, cfg.d_a, cfg.heads, True, cfg.dropout)
        self.input = Linear(d_in, cfg.d_h, rng)
        if cfg.backbone == "transformer":
            block = DecoderBlock if decoder else EncoderBlock
            self.blocks = [block(attention, rng, cfg.d_ff) for _ in range(cfg.blocks)]
        else:
            self.blocks = [LSTM(cfg.d_h, cfg.d_h, rng) for _ in range(cfg.blocks)]
        self.representation = Linear(cfg.d_h, cfg.d_h, rng)
        self.outcome_head = Head(cfg.d_h + cfg.k, cfg.d_h, 1, rng)
        if cfg.use_ps:
            self.treatment_lstms = [
                LSTM(cfg.k if i == 0 else cfg.d_h, cfg.d_h, rng) for i in range(cfg.blocks)
            ]
            self.ps_head = Head(cfg.d_h, cfg.d_h, cfg.k, rng)
        else:
            self.treatment_lstms = []
            self.ps_head = None
        self.hps_head = Head(cfg.d_h, cfg.d_h, cfg.k, rng) if cfg.use_hps else None

    def groups(self) -> dict[str, list[Tensor]]:
        out = {}
        for group, members in self.group_members.items():
            params = []
            for member in members:
                value = getattr(self, member, None)
                if isinstance(value, Module):
                    params.extend(value.parameters())
                elif isinstance(value, list):
                    for item in value:
                        params.extend(item.parameters())
            out[group] = params
        return out

    def _dropout(self) -> float:
        return self.cfg.dropout if self.training else 0.0

    def _treatment_pathway(self, treatments: np.ndarray, init: tuple | None, rng):
        h = Tensor(treatments)
        final = None
        for i, lstm in enumerate(self.treatment_lstms):
            out = lstm(h, state=init if i == 0 else None, dropout=self._dropout(), rng=rng)
            h, final = out.hidden, (out.hidden, out.cells)
        return h, final

    def _backbone_lstm(self, h: Tensor, init: tuple | None, rng):
        top = None
        for i, lstm in enumerate(self.blocks):
            out = lstm(h, state=init if i == 0 else None, dropout=self._dropout(), rng=rng)
            h, top = out.hidden, (out.hidden, out.cells)
        return h, top

    def outcome(self, phi: Tensor, t_next: np.ndarray) -> Tensor:
        """Outcome head on ``phi`` (B, P, d_h) given one-hot interventions (B, P, K)."""
        out = self.outcome_head(ops.concat([phi, Tensor(t_next)], axis=-1))
        return ops.reshape(out, out.shape[:-1])

    def _heads(self, phi: Tensor, treatment_hidden: Tensor | None, reversal: float | None):
        ps = hps = None
        if self.ps_head is not None and treatment_hidden is not None:
            ps = ops.softmax(self.ps_head(treatment_hidden), axis=-1)
        if self.hps_head is not None:
            source = phi if reversal is None else ops.gradient_reversal(phi, reversal)
            hps = ops.softmax(self.hps_head(source), axis=-1)
        return ps, hps


def _split_state(state: Tensor, width: int) -> tuple[Tensor, Tensor]:
    return state[..., :width], state[..., width:]


class MsctEncoder(_Stack):
    def __init__(self, cfg: MsctConfig, rng: np.random.Generator):
        super().__init__(cfg, cfg.encoder_input_width, rng, decoder=False)

    def __call__(
        self,
        batch: SequenceBatch,
        t_next: np.ndarray | None = None,
        rng=None,
        reversal: float | None = None,
    ) -> EncoderOutput:
        """Encode every position that has a next intervention.

        Without ``t_next`` the factual treatments supply it, so positions
        ``0 .. L-2`` are encoded; with ``t_next`` of shape (B, L, K) all ``L``.
        """
        cfg = self.cfg
        treatments = batch.treatments()
        if t_next is None:
            t_next = treatments[:, 1:]
        positions = t_next.shape[1]
        if positions > batch.seq_len or positions < 1:
            raise ShapeError("encode", t_next.shape, batch.y.shape, detail="next-treatment length")

        B = len(batch)
        static = np.repeat(batch.s[:, None, :], positions, axis=1)
        inputs = np.concatenate(
            [batch.x[:, :positions], treatments[:, :positions], batch.y[:, :positions, None], static],
            axis=-1,
        )
        pe = positional_encoding(positions, cfg.d_h, cfg.pe_base)
        h = ops.add(self.input(Tensor(inputs)), Tensor(pe))

        backbone_memory = None
        if cfg.backbone == "transformer":
            for block in self.blocks:
                h = block(h, rng=rng)
        else:
            h, backbone_memory = self._backbone_lstm(h, None, rng)
        phi = ops.elu(self.representation(h))

        treatment_hidden, memory = None, None
        if self.treatment_lstms:
            treatment_hidden, memory = self._treatment_pathway(treatments[:, :positions], None, rng)
        ps, hps = self._heads(phi, treatment_hidden, reversal)
        y_hat = self.outcome(phi, t_next)
        if y_hat.shape != (B, positions):
            raise ShapeError("encode", y_hat.shape, (B, positions))
        return EncoderOutput(phi, y_hat, ps, hps, memory, backbone_memory)


class MsctDecoder(_Stack):
    def __init__(self, cfg: MsctConfig, rng: np.random.Generator):
        super().__init__(cfg, cfg.decoder_input_width, rng, decoder=True)
        # encoder (h, c) at the anchor -> initial state of the first decoder LSTM
        self.memory = Linear(2 * cfg.d_h, 2 * cfg.d_h, rng) if cfg.use_ps else None
        self.backbone_memory = (
            Linear(2 * cfg.d_h, 2 * cfg.d_h, rng) if cfg.backbone == "lstm" else None
        )

    def _initial_state(self, projection: Linear, state) -> tuple[Tensor, Tensor] | None:
        if state is None:
            return None
        joined = Tensor(np.concatenate(state, axis=-1))
        return _split_state(projection(joined), self.cfg.d_h)

    def __call__(self, inputs: DecoderInputs, rng=None, reversal: float | None = None) -> DecoderOutput:
        cfg = self.cfg
        if inputs.phi is None:
            raise UsageError("decode needs the encoder representation")
        B, n = inputs.t_in.shape
        static = np.repeat(inputs.s[:, None, :], n, axis=1)
        features = np.concatenate(
            [
                one_hot(inputs.t_in, cfg.k),
                static,
                inputs.y_lag[..., None],
                inputs.y_prev[..., None],
            ],
            axis=-1,
        )
        rows = inputs.anchors[:, None] + np.arange(1, n + 1)[None, :]
        table = positional_encoding(int(rows.max()) + 1, cfg.d_h, cfg.pe_base)
        h = ops.add(self.input(Tensor(features)), Tensor(table[rows]))

        if cfg.backbone == "transformer":
            keys = inputs.phi.shape[1]
            key_mask = (np.arange(keys)[None, :] <= inputs.anchors[:, None])[:, None, None, :]
            for block in self.blocks:
                h = block(h, inputs.phi, key_mask=key_mask, rng=rng)
        else:
            init = self._initial_state(self.backbone_memory, inputs.backbone_memory)
            h, _ = self._backbone_lstm(h, init, rng)
        phi = ops.elu(self.representation(h))

        treatment_hidden = None
        if self.treatment_lstms:
            init = self._initial_state(self.memory, inputs.memory)
            treatment_hidden, _ = self._treatment_pathway(one_hot(inputs.t_in, cfg.k), init, rng)
        ps, hps = self._heads(phi, treatment_hidden, reversal)
        y_hat = self.outcome(phi, one_hot(inputs.t_next, cfg.k))
        return DecoderOutput(phi, y_hat, ps, hps)


class MsctModel(Module):
    def __init__(self, cfg: MsctConfig, normalizer: Normalizer | None = None):
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.encoder = MsctEncoder(cfg, rng)
        self.decoder = MsctDecoder(cfg, rng)
        self.normalizer = normalizer or Normalizer.identity(cfg.d_x, cfg.d_s)

    def parameter_groups(self) -> dict[str, list[Tensor]]:
        groups = {}
        for stack_name, stack in (("encoder", self.encoder), ("decoder", self.decoder)):
            for group, params in stack.groups().items():
                groups[f"{stack_name}.{group}"] = params
        return groups

    def check_partition(self) -> None:
        """Every trainable tensor sits in exactly one named group."""
        seen: dict[int, str] = {}
        for group, params in self.parameter_groups().items():
            for p in params:
                if id(p) in seen:
                    raise UsageError(f"parameter in both {seen[id(p)]} and {group}")
                seen[id(p)] = group
        missing = [name for name, p in self.named_parameters() if id(p) not in seen]
        if missing:
            raise UsageError(f"parameters outside every group: {missing}")

    # --- forward passes ----------------------------------------------------

    def encode(self, batch: SequenceBatch, t_next=None, rng=None, reversal=None) -> EncoderOutput:
        return self.encoder(batch, t_next=t_next, rng=rng, reversal=reversal)

    def decode(self, inputs: DecoderInputs, rng=None, reversal=None) -> DecoderOutput:
        return self.decoder(inputs, rng=rng, reversal=reversal)

    def decode_step(self, inputs: DecoderInputs) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
        """Outputs at the last decoder position for an autoregressive prefix."""
        out = self.decoder(inputs)
        return out.y_hat.data[:, -1], _last(out.ps), _last(out.hps)

    # --- counterfactual rollout ---------------------------------------------

    def _strategy_classes(self, strategies: Sequence[InterventionStrategy]) -> np.ndarray:
        return strategy_plans(strategies, self.cfg.tau_max, self.cfg.crash_class)

    def rollout_plans(self, batch: SequenceBatch, anchors: np.ndarray, plans: np.ndarray) -> np.ndarray:
        """Standardised predictions ``(R, n + 1)`` for one unit.

        Row ``r`` branches at ``anchors[r]`` and follows ``plans[r]``, the
        treatment classes of steps ``anchor+1 .. anchor+n+1``. Horizon 1 comes
        from the encoder; later horizons from the decoder fed its own predictions.
        """
        if len(batch) != 1:
            raise UsageError("rollout works on a single unit")
        anchors = np.asarray(anchors, dtype=np.int64)
        if anchors.size == 0 or anchors.min() < 0 or anchors.max() >= batch.seq_len:
            raise HorizonRangeError(f"anchors outside [0, {batch.seq_len})")
        R, width = plans.shape
        n = width - 1
        if n > self.cfg.tau_max:
            raise HorizonRangeError(f"{n} decoder steps exceed tau_max={self.cfg.tau_max}")
        k = self.cfg.k

        was_training = self.training
        self.eval()
        try:
            with no_grad():
                factual_next = np.concatenate(
                    [batch.classes[:, 1:], np.zeros((1, 1), dtype=np.int64)], axis=1
                )
                enc = self.encoder(batch, t_next=one_hot(factual_next, k))
                phi_all = enc.phi.data[0]
                preds = np.zeros((R, n + 1))
                first = self.encoder.outcome(Tensor(phi_all[anchors][:, None, :]), one_hot(plans[:, :1], k))
                preds[:, 0] = first.data[:, 0]

                memory = None
                if enc.memory is not None:
                    memory = tuple(m.data[0, anchors] for m in enc.memory)
                backbone_memory = None
                if enc.backbone_memory is not None:
                    backbone_memory = tuple(m.data[0, anchors] for m in enc.backbone_memory)
                phi_rows = Tensor(np.broadcast_to(phi_all, (R,) + phi_all.shape))
                y_anchor = batch.y[0, anchors]
                s_rows = np.repeat(batch.s, R, axis=0)
                for j in range(1, n + 1):
                    inputs = DecoderInputs(
                        t_in=plans[:, :j],
                        y_lag=np.concatenate([y_anchor[:, None], preds[:, : j - 1]], axis=1),
                        y_prev=preds[:, :j],
                        t_next=plans[:, 1 : j + 1],
                        s=s_rows,
                        anchors=anchors,
                        phi=phi_rows,
                        memory=memory,
                        backbone_memory=backbone_memory,
                    )
                    preds[:, j], _, _ = self.decode_step(inputs)
        finally:
            self.train(was_training)
        return preds

    def rollout(self, batch: SequenceBatch, anchors: Sequence[int], strategies: Sequence[InterventionStrategy]) -> np.ndarray:
        """Standardised predictions ``(A, S, n + 1)`` for every anchor and strategy."""
        plans = self._strategy_classes(strategies)
        anchors = np.asarray(list(anchors), dtype=np.int64)
        S, A = len(plans), len(anchors)
        preds = self.rollout_plans(batch, np.repeat(anchors, S), np.tile(plans, (A, 1)))
        return preds.reshape(A, S, plans.shape[1])

    def rollout_unit(
        self,
        unit: TimeSeriesUnit,
        anchors: Sequence[int],
        strategies: Sequence[InterventionStrategy],
    ) -> np.ndarray:
        """Predicted speeds ``(A, S, n + 1)`` for every anchor and strategy of one unit."""
        batch = make_batch([unit], self.normalizer, self.cfg.k)
        return self.normalizer.inverse_y(self.rollout(batch, anchors, strategies))

    def predict_counterfactual(
        self,
        history: TimeSeriesUnit,
        strategies: Sequence[InterventionStrategy],
        anchor: int | None = None,
    ) -> np.ndarray:
        """Outcome matrix (strategy x horizon) after the last observed step of ``history``."""
        anchor = history.seq_len - 1 if anchor is None else anchor
        return self.rollout_unit(history, [anchor], strategies)[0]

    def predict_factual(self, unit: TimeSeriesUnit, anchors: Sequence[int], horizon: int) -> np.ndarray:
        """Predicted speeds ``(A, horizon)`` under each anchor's factual future treatments."""
        if horizon < 1 or horizon - 1 > self.cfg.tau_max:
            raise HorizonRangeError(f"horizon {horizon} outside [1, tau_max + 1]")
        anchors = np.asarray(list(anchors), dtype=np.int64)
        plans = factual_plans(unit, anchors, horizon, self.cfg.k)
        batch = make_batch([unit], self.normalizer, self.cfg.k)
        return self.normalizer.inverse_y(self.rollout_plans(batch, anchors, plans))


def _last(t: Tensor | None) -> np.ndarray | None:
    return None if t is None else t.data[:, -1]
