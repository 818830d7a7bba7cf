"""Outcome, propensity and domain-confusion losses."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from msct.tensor import ops
from msct.tensor.tensor import Tensor

PROB_FLOOR = 1e-12


def loss_outcome(pred: Tensor, true) -> Tensor:
    """Mean squared error over every element."""
    return ops.mean(ops.square(ops.sub(pred, true)))


def _picked(probs: Tensor, classes: np.ndarray) -> Tensor:
    k = probs.shape[-1]
    mask = np.eye(k)[np.asarray(classes, dtype=np.int64)]
    return ops.sum(ops.mul(probs, mask), axis=-1)


def loss_ps(probs: Tensor, classes: np.ndarray) -> Tensor:
    """Cross-entropy of the realised class, averaged over units and steps."""
    return ops.neg(ops.mean(ops.log(ops.clamp_min(_picked(probs, classes), PROB_FLOOR))))


def loss_hps_confusion(probs: Tensor) -> Tensor:
    """Cross-entropy against the uniform distribution over the K classes."""
    k = probs.shape[-1]
    logs = ops.log(ops.clamp_min(probs, PROB_FLOOR))
    return ops.neg(ops.mean(ops.div(ops.sum(logs, axis=-1), float(k))))


# true-label fit of the HPS head (adversarial and gradient-reversal modes)
loss_hps_true = loss_ps


@dataclass
class LossBreakdown:
    l_y: float = 0.0
    l_ps: float = 0.0
    l_hps: float = 0.0
    lam: float = 1.0

    @property
    def total(self) -> float:
        return total_loss(self, self.lam)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.pop("lam")
        out["total"] = self.total
        return out


def total_loss(parts: LossBreakdown, lam: float) -> float:
    return parts.l_y + lam * (parts.l_ps + parts.l_hps)


def combine(l_y: Tensor, lam: float, *balance: Tensor | None) -> Tensor:
    """``l_y + lam * (sum of present balance terms)`` as a differentiable scalar."""
    terms = [b for b in balance if b is not None]
    if not terms or lam == 0.0:
        return l_y
    extra = terms[0]
    for term in terms[1:]:
        extra = ops.add(extra, term)
    return ops.add(l_y, ops.mul(extra, lam))
