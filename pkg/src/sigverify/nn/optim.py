from __future__ import annotations

from typing import Iterable

import numpy as np

from .tensor import NonFiniteError, Parameter


def adam_step(
    param: Parameter,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Parameter:
    """Apply one bias-corrected Adam update in place and clear the gradient."""
    g = param.grad
    if g is None:
        g = np.zeros_like(param.data)
    if not np.all(np.isfinite(g)):
        raise NonFiniteError(f"non-finite gradient on {param.name or param.shape}")
    param.step_count += 1
    t = param.step_count
    param.adam_m = beta1 * param.adam_m + (1.0 - beta1) * g
    param.adam_v = beta2 * param.adam_v + (1.0 - beta2) * (g * g)
    m_hat = param.adam_m / (1.0 - beta1**t)
    v_hat = param.adam_v / (1.0 - beta2**t)
    update = lr * m_hat / (np.sqrt(v_hat) + eps)
    param.data = (param.data - update).astype(param.data.dtype, copy=False)
    param.zero_grad()
    return param


class Adam:
    def __init__(self, params: Iterable[Parameter], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps

    def step(self) -> None:
        b1, b2 = self.betas
        for p in self.params:
            adam_step(p, self.lr, b1, b2, self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def snapshot(params: Iterable[Parameter]) -> list[tuple]:
    """Copy values and optimizer state so they can be restored bit for bit."""
    return [
        (p, p.data.copy(), p.adam_m.copy(), p.adam_v.copy(), p.step_count)
        for p in params
    ]


def restore(state: list[tuple]) -> None:
    for p, data, m, v, steps in state:
        p.data = data.copy()
        p.adam_m = m.copy()
        p.adam_v = v.copy()
        p.step_count = steps
        p.zero_grad()
