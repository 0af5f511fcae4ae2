from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError, DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ContractError(f"learning_rate must be positive, got {self.learning_rate}")


def adam_step(params: dict[str, Tensor], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update in place.

    Parameters whose ``requires_grad`` flag is off are treated as frozen and
    left untouched, moments included.  Every trainable parameter must carry
    a gradient.
    """
    trainable = [(name, p) for name, p in params.items() if p.requires_grad]
    for name, p in trainable:
        if p.grad is None:
            raise ContractError(f"trainable parameter {name!r} has no gradient")
        if p.grad.shape != p.data.shape:
            raise DimensionError(f"gradient for {name!r} has shape {p.grad.shape}, expected {p.data.shape}")

    state.step_count += 1
    b1, b2, t = state.beta1, state.beta2, state.step_count
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in trainable:
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
            state.second_moment[name] = np.zeros_like(p.data)
        v = state.second_moment[name]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
    return state
