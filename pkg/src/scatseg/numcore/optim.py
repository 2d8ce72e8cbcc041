"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import OptimError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: Tensor, **kw):
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **kw)


def adam_step(param: Tensor, state: AdamState):
    """One in-place Adam update of ``param`` from ``param.grad``."""
    if param.grad is None:
        raise OptimError(f"parameter {param.name or param.shape} has no gradient")
    if state.m.shape != param.shape or state.v.shape != param.shape:
        raise ShapeError(f"Adam state {state.m.shape} does not match parameter {param.shape}")
    g = param.grad
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    param.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return param, state


@dataclass
class Adam:
    """Adam over a named parameter dict; ``lr`` is shared by every state."""

    params: dict
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states[name] = AdamState.for_param(
                p, lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def set_lr(self, lr):
        self.lr = float(lr)
        for st in self.states.values():
            st.lr = self.lr

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        for name, p in self.params.items():
            adam_step(p, self.states[name])
