"""Recurrent cells (LSTM, GRU, Elman RNN) with variational dropout.

Every cell consumes a batch-major sequence ``(B, L, d_in)``. Dropout masks on
the inputs and on the recurrent state are drawn once per sequence and reused
at every step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from msct.errors import ShapeError
from msct.layers.module import Module, uniform_init
from msct.tensor import ops
from msct.tensor.tensor import Tensor, parameter

LSTM_FORGET_BIAS = 1.0


@dataclass
class RecurrentOutput:
    hidden: Tensor  # (B, L, H)
    cells: Tensor | None  # (B, L, H), LSTM only
    final: tuple[Tensor, Tensor | None]


class _RecurrentCell(Module):
    gates = 1

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        self.d_in = d_in
        self.hidden = hidden
        width = self.gates * hidden
        self.w_x = parameter(uniform_init(rng, d_in, (d_in, width)), name="w_x")
        self.w_h = parameter(uniform_init(rng, hidden, (hidden, width)), name="w_h")
        self.bias = parameter(uniform_init(rng, hidden, (width,)), name="bias")

    def _check_input(self, x: Tensor) -> None:
        if x.ndim != 3 or x.shape[-1] != self.d_in:
            raise ShapeError(type(self).__name__, x.shape, (None, None, self.d_in), detail="input width")

    def _dropout_masks(self, x: Tensor, dropout: float, rng) -> tuple[Tensor, Tensor | None]:
        if not self.training or dropout == 0.0:
            return x, None
        x = ops.variational_dropout(x, dropout, True, rng)
        recurrent = ops.sample_variational_mask((x.shape[0], self.hidden), dropout, rng)
        return x, Tensor(recurrent)

    def _zeros(self, batch: int) -> Tensor:
        return Tensor(np.zeros((batch, self.hidden)))


class LSTM(_RecurrentCell):
    """Single-layer LSTM; gate order is input, forget, candidate, output."""

    gates = 4

    def __init__(self, d_in: int, hidden: int, rng: np.random.Generator):
        super().__init__(d_in, hidden, rng)
        self.bias.data[hidden : 2 * hidden] = LSTM_FORGET_BIAS

    def __call__(
        self,
        x: Tensor,
        state: tuple[Tensor, Tensor] | None = None,
        dropout: float = 0.0,
        rng=None,
    ) -> RecurrentOutput:
        self._check_input(x)
        batch, length, _ = x.shape
        x, recurrent_mask = self._dropout_masks(x, dropout, rng)
        h, c = state if state is not None else (self._zeros(batch), self._zeros(batch))
        H = self.hidden
        projected = ops.add(ops.matmul(x, self.w_x), self.bias)

        hiddens, cells = [], []
        for t in range(length):
            h_in = h if recurrent_mask is None else ops.mul(h, recurrent_mask)
            z = ops.add(projected[:, t, :], ops.matmul(h_in, self.w_h))
            i = ops.sigmoid(z[:, 0:H])
            f = ops.sigmoid(z[:, H : 2 * H])
            g = ops.tanh(z[:, 2 * H : 3 * H])
            o = ops.sigmoid(z[:, 3 * H : 4 * H])
            c = ops.add(ops.mul(f, c), ops.mul(i, g))
            h = ops.mul(o, ops.tanh(c))
            hiddens.append(h)
            cells.append(c)
        return RecurrentOutput(ops.stack(hiddens, axis=1), ops.stack(cells, axis=1), (h, c))


class GRU(_RecurrentCell):
    """Gate order is update, reset, candidate."""

    gates = 3

    def __call__(self, x: Tensor, state: Tensor | None = None, dropout: float = 0.0, rng=None) -> RecurrentOutput:
        self._check_input(x)
        batch, length, _ = x.shape
        x, recurrent_mask = self._dropout_masks(x, dropout, rng)
        h = state if state is not None else self._zeros(batch)
        H = self.hidden
        projected = ops.add(ops.matmul(x, self.w_x), self.bias)
        w_zr = self.w_h[:, 0 : 2 * H]
        w_n = self.w_h[:, 2 * H : 3 * H]

        hiddens = []
        for t in range(length):
            h_in = h if recurrent_mask is None else ops.mul(h, recurrent_mask)
            xp = projected[:, t, :]
            zr = ops.sigmoid(ops.add(xp[:, 0 : 2 * H], ops.matmul(h_in, w_zr)))
            z, r = zr[:, 0:H], zr[:, H : 2 * H]
            n = ops.tanh(ops.add(xp[:, 2 * H : 3 * H], ops.matmul(ops.mul(r, h_in), w_n)))
            h = ops.add(ops.mul(ops.sub(1.0, z), n), ops.mul(z, h))
            hiddens.append(h)
        return RecurrentOutput(ops.stack(hiddens, axis=1), None, (h, None))


class ElmanRNN(_RecurrentCell):
    def __call__(self, x: Tensor, state: Tensor | None = None, dropout: float = 0.0, rng=None) -> RecurrentOutput:
        self._check_input(x)
        batch, length, _ = x.shape
        x, recurrent_mask = self._dropout_masks(x, dropout, rng)
        h = state if state is not None else self._zeros(batch)
        projected = ops.add(ops.matmul(x, self.w_x), self.bias)

        hiddens = []
        for t in range(length):
            h_in = h if recurrent_mask is None else ops.mul(h, recurrent_mask)
            h = ops.tanh(ops.add(projected[:, t, :], ops.matmul(h_in, self.w_h)))
            hiddens.append(h)
        return RecurrentOutput(ops.stack(hiddens, axis=1), None, (h, None))


CELLS = {"lstm": LSTM, "gru": GRU, "rnn": ElmanRNN}


def lstm_forward(
    inputs: Tensor,
    cell: LSTM,
    state: tuple[Tensor, Tensor] | None = None,
    dropout: float = 0.0,
    rng=None,
) -> tuple[Tensor, tuple[Tensor, Tensor]]:
    """Run ``cell`` over ``inputs``; returns the hidden sequence and final ``(h, c)``."""
    out = cell(inputs, state=state, dropout=dropout, rng=rng)
    return out.hidden, out.final
