"""Mini-batch schedules and decoder training samples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from msct.data import SequenceBatch
from msct.errors import HorizonRangeError, UsageError
from msct.models.msct import DecoderInputs, MsctModel
from msct.tensor.tensor import Tensor, no_grad

CACHE_CHUNK = 64


def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index blocks covering ``range(n)`` once."""
    if n < 1:
        raise UsageError("empty dataset")
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@dataclass
class RepresentationCache:
    """Eval-mode encoder outputs for every unit and position."""

    phi: np.ndarray  # (N, P, d_h)
    y_hat: np.ndarray  # (N, P) one-step predictions under factual treatments
    memory: tuple[np.ndarray, np.ndarray] | None
    backbone_memory: tuple[np.ndarray, np.ndarray] | None

    @property
    def positions(self) -> int:
        return self.phi.shape[1]


def precompute_representations(batch: SequenceBatch, model: MsctModel) -> RepresentationCache:
    """Encoder representations, memory states and one-step predictions (dropout off)."""
    was_training = model.training
    model.eval()
    phi, y_hat, mem_h, mem_c, bb_h, bb_c = [], [], [], [], [], []
    try:
        with no_grad():
            for start in range(0, len(batch), CACHE_CHUNK):
                out = model.encode(batch.take(slice(start, start + CACHE_CHUNK)))
                phi.append(out.phi.data)
                y_hat.append(out.y_hat.data)
                if out.memory is not None:
                    mem_h.append(out.memory[0].data)
                    mem_c.append(out.memory[1].data)
                if out.backbone_memory is not None:
                    bb_h.append(out.backbone_memory[0].data)
                    bb_c.append(out.backbone_memory[1].data)
    finally:
        model.train(was_training)
    return RepresentationCache(
        phi=np.concatenate(phi),
        y_hat=np.concatenate(y_hat),
        memory=(np.concatenate(mem_h), np.concatenate(mem_c)) if mem_h else None,
        backbone_memory=(np.concatenate(bb_h), np.concatenate(bb_c)) if bb_h else None,
    )


def decoder_anchor_range(seq_len: int, tau_max: int) -> range:
    """Anchors whose decoder targets ``Y_{t+2} .. Y_{t+tau_max+1}`` all exist."""
    return range(0, seq_len - tau_max - 1)


def decoder_samples(
    n_units: int,
    seq_len: int,
    tau_max: int,
    rng: np.random.Generator,
    per_unit: int | None = None,
) -> np.ndarray:
    """``(unit, anchor)`` pairs; ``per_unit`` subsamples anchors without replacement."""
    anchors = np.array(decoder_anchor_range(seq_len, tau_max))
    if anchors.size == 0:
        raise HorizonRangeError(f"tau_max={tau_max} leaves no anchors in length {seq_len}")
    pairs = []
    for unit in range(n_units):
        chosen = anchors
        if per_unit is not None and per_unit < anchors.size:
            chosen = np.sort(rng.choice(anchors, size=per_unit, replace=False))
        pairs.extend((unit, a) for a in chosen)
    return np.array(pairs, dtype=np.int64)


def build_decoder_inputs(
    batch: SequenceBatch,
    cache: RepresentationCache,
    pairs: np.ndarray,
    tau_max: int,
) -> tuple[DecoderInputs, np.ndarray, np.ndarray]:
    """Teacher-forced decoder inputs plus outcome and treatment targets ``(B, tau_max)``.

    Position ``j`` of anchor ``t`` reads the treatment of step ``t+j``, the true
    outcome ``Y_{t+j-1}`` and the latest outcome (the cached one-step prediction
    for ``j = 1``, the true ``Y_{t+j}`` after that) and targets ``Y_{t+j+1}``.
    """
    units, anchors = pairs[:, 0], pairs[:, 1]
    if anchors.max() + tau_max + 1 >= batch.seq_len or anchors.max() >= cache.positions:
        raise HorizonRangeError(f"tau_max={tau_max} exceeds the cached range")
    steps = anchors[:, None] + np.arange(1, tau_max + 1)[None, :]  # t + j
    rows = units[:, None]
    y_prev = batch.y[rows, steps]
    y_prev[:, 0] = cache.y_hat[units, anchors]
    inputs = DecoderInputs(
        t_in=batch.classes[rows, steps],
        y_lag=batch.y[rows, steps - 1],
        y_prev=y_prev,
        t_next=batch.classes[rows, steps + 1],
        s=batch.s[units],
        anchors=anchors,
        phi=Tensor(cache.phi[units]),
        memory=None if cache.memory is None else tuple(m[units, anchors] for m in cache.memory),
        backbone_memory=(
            None
            if cache.backbone_memory is None
            else tuple(m[units, anchors] for m in cache.backbone_memory)
        ),
    )
    return inputs, batch.y[rows, steps + 1], batch.classes[rows, steps + 1]
