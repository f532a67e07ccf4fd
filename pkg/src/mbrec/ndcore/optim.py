"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def adam_step(state: AdamState, param: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Return the updated parameter; ``state`` is advanced in place."""
    if param.shape != grad.shape:
        raise DimensionError(f"adam_step: parameter {param.shape} vs gradient {grad.shape}")
    if state.m is None:
        state.m = np.zeros_like(param)
        state.v = np.zeros_like(param)
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (grad * grad)
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return param - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


@dataclass
class Adam:
    """Keeps one :class:`AdamState` per named parameter."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            st = self.states.get(name)
            if st is None:
                st = self.states[name] = AdamState(
                    self.learning_rate, self.beta1, self.beta2, self.epsilon)
            params[name] = adam_step(st, params[name], g).astype(params[name].dtype, copy=False)
