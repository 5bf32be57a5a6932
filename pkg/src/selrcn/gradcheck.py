"""Finite-difference verification of taped gradients.

Checks are only reliable in float64; float32 central differences lose too
many digits to resolve a 1e-4 relative tolerance.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor, backward

REL_FLOOR = 1e-8


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, delta: float = 1e-5,
               sample: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between taped and central-difference gradients of f at x.

    `f` must be scalar-valued and deterministic. With `sample` set, only that
    many coordinates (drawn without replacement) are compared, which keeps
    large parameter tensors affordable.
    """
    x.requires_grad = True
    x.grad = None
    with Tape() as tape:
        y = f(x)
    backward(tape, y)
    if x.grad is None:
        analytic = np.zeros_like(x.data)
    else:
        analytic = x.grad.copy()

    coords = np.arange(x.data.size)
    if sample is not None and sample < coords.size:
        rng = rng or np.random.default_rng(0)
        coords = rng.choice(coords.size, size=sample, replace=False)

    flat = x.data.reshape(-1)
    analytic_flat = analytic.reshape(-1)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + delta
        up = f(x).data.item()
        flat[i] = orig - delta
        down = f(x).data.item()
        flat[i] = orig
        numeric = (up - down) / (2.0 * delta)
        a = float(analytic_flat[i])
        err = abs(a - numeric) / max(abs(a), abs(numeric), REL_FLOOR)
        worst = max(worst, err)
    return worst


def grad_check_params(loss_fn: Callable[[], Tensor], params: Mapping[str, Tensor],
                      delta: float = 1e-5, sample: int | None = None,
                      rng: np.random.Generator | None = None) -> dict[str, float]:
    """Run grad_check against every named parameter of a zero-argument loss.

    The loss closure reads the parameter tensors it closes over, so each check
    wraps it as a function of one parameter at a time.
    """
    rng = rng or np.random.default_rng(0)
    errors: dict[str, float] = {}
    for name, p in params.items():
        errors[name] = grad_check(lambda _t, fn=loss_fn: fn(), p, delta=delta,
                                  sample=sample, rng=rng)
    return errors
