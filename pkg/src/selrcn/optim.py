"""Adam optimizer with bias correction."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .autodiff import DimensionError, Tensor


class AdamState:
    """Per-parameter first/second moment buffers plus the shared step counter."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """One in-place Adam update over aligned parameter/gradient lists."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"adam_step got {len(params)} params, {len(grads)} grads, state of {len(state.m)}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.asarray(g)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.data.dtype)


class Adam:
    """Convenience wrapper binding parameters to an AdamState."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState(self.params, lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def step(self) -> None:
        grads = []
        for p in self.params:
            if p.grad is None:
                grads.append(np.zeros_like(p.data))
            else:
                grads.append(p.grad)
        adam_step(self.params, grads, self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
