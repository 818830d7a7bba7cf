"""Adam with bias correction, one state object per parameter group."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from msct.errors import ConfigError, ShapeError
from msct.tensor.tensor import Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr", f"learning rate must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ConfigError(name, f"moment decay must lie in [0, 1), got {value}")

    def ensure_moments(self, params: Sequence[Tensor]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.data) for p in params]
            self.v = [np.zeros_like(p.data) for p in params]
        if len(self.m) != len(params):
            raise ShapeError("adam_step", (len(self.m),), (len(params),), detail="state/param count")
        for p, m in zip(params, self.m):
            if m.shape != p.shape:
                raise ShapeError("adam_step", m.shape, p.shape, detail="moment vs parameter")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
            "step": self.step,
            "m": [m.copy() for m in self.m],
            "v": [v.copy() for v in self.v],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "AdamState":
        return cls(
            lr=payload["lr"],
            beta1=payload["beta1"],
            beta2=payload["beta2"],
            eps=payload["eps"],
            step=int(payload["step"]),
            m=[np.array(m, dtype=np.float64) for m in payload["m"]],
            v=[np.array(v, dtype=np.float64) for v in payload["v"]],
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float | None = None,
) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError("adam_step", (len(params),), (len(grads),), detail="param/grad count")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ShapeError("adam_step", p.shape, np.shape(g), detail="gradient vs parameter")
    state.ensure_moments(params)

    lr = state.lr if lr is None else lr
    state.step += 1
    correction1 = 1.0 - state.beta1**state.step
    correction2 = 1.0 - state.beta2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        m_hat = state.m[i] / correction1
        v_hat = state.v[i] / correction2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Binds a fixed parameter list to an :class:`AdamState`."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, **kwargs):
        self.params = list(params)
        self.state = AdamState(lr=lr, **kwargs)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)

    def state_dict(self) -> dict:
        return self.state.to_dict()

    def load_state_dict(self, payload: dict) -> None:
        self.state = AdamState.from_dict(payload)
        self.state.ensure_moments(self.params)
