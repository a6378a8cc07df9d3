"""ADAM optimizer with bias-corrected moment estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Param


@dataclass
class AdamState:
    """Per-parameter first/second moments and step counter."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_param(cls, value: np.ndarray, beta1: float = 0.9, beta2: float = 0.999,
                  epsilon: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros_like(value), v=np.zeros_like(value),
                   beta1=beta1, beta2=beta2, epsilon=epsilon)


def adam_step(value: np.ndarray, grad: np.ndarray, state: AdamState, lr: float) -> np.ndarray:
    """One bias-corrected ADAM update; mutates ``state`` and returns the new value."""
    if grad.shape != value.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter {value.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient: ADAM step rejected")
    if state.m.shape != value.shape or state.v.shape != value.shape:
        raise ValueError("optimizer state shape does not match parameter")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return value - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


class Adam:
    """Applies ``adam_step`` to a list of parameters."""

    def __init__(self, params: list[Param], beta1: float = 0.9, beta2: float = 0.999,
                 epsilon: float = 1e-8):
        self.params = params
        self.states = [AdamState.for_param(p.value, beta1, beta2, epsilon) for p in params]

    def step(self, lr: float) -> None:
        for p, s in zip(self.params, self.states):
            p.value[...] = adam_step(p.value, p.grad, s, lr)
