"""Adam parameter updates on a flat ParamVector."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradError
from .params import ParamVector


class AdamOptimizer:
    """Standard Adam with bias correction; zeroes grads after each step."""

    def __init__(self, n_params: int, learning_rate: float = 2.5e-4,
                 betas: tuple[float, float] = (0.9, 0.999),
                 epsilon: float = 1e-8):
        self.learning_rate = learning_rate
        self.betas = betas
        self.epsilon = epsilon
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.step_count = 0

    def step(self, params: ParamVector, learning_rate: float | None = None):
        if not np.all(np.isfinite(params.grads)):
            raise NonFiniteGradError("gradient contains NaN/Inf")
        lr = self.learning_rate if learning_rate is None else learning_rate
        b1, b2 = self.betas
        self.step_count += 1
        g = params.grads
        self.m = b1 * self.m + (1.0 - b1) * g
        self.v = b2 * self.v + (1.0 - b2) * g * g
        m_hat = self.m / (1.0 - b1 ** self.step_count)
        v_hat = self.v / (1.0 - b2 ** self.step_count)
        params.values -= lr * m_hat / (np.sqrt(v_hat) + self.epsilon)
        params.zero_grads()


def sgd_adam_update(params: ParamVector, opt: AdamOptimizer,
                    learning_rate: float | None = None) -> ParamVector:
    """Apply one Adam step in place and return ``params`` for chaining."""
    opt.step(params, learning_rate)
    return params
