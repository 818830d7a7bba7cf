"""Parameter containers: a tiny Module base plus Linear and LayerNorm."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from msct.tensor import ops
from msct.tensor.tensor import Tensor, parameter


def uniform_init(rng: np.random.Generator, fan_in: int, shape: tuple[int, ...]) -> np.ndarray:
    bound = np.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks its attributes to find parameters and sub-modules.

    Attribute order is insertion order, so parameter names and their order are
    stable for a given constructor, which the checkpoint format relies on.
    """

    training: bool = True

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{full}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{full}.{i}", item

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for module in self.modules():
            module.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.d_in = d_in
        self.d_out = d_out
        self.weight = parameter(uniform_init(rng, d_in, (d_in, d_out)), name="weight")
        self.bias = parameter(uniform_init(rng, d_in, (d_out,)), name="bias") if bias else None

    def __call__(self, x) -> Tensor:
        return ops.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, width: int):
        self.gain = parameter(np.ones(width), name="gain")
        self.bias = parameter(np.zeros(width), name="bias")

    def __call__(self, x) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias)
