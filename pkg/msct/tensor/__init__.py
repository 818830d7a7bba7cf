from msct.tensor.optim import Adam, AdamState, adam_step
from msct.tensor.tensor import (
    Graph,
    Tensor,
    backward,
    is_grad_enabled,
    no_grad,
    parameter,
    zero_grad,
)

__all__ = [
    "Adam",
    "AdamState",
    "Graph",
    "Tensor",
    "adam_step",
    "backward",
    "is_grad_enabled",
    "no_grad",
    "parameter",
    "zero_grad",
]
