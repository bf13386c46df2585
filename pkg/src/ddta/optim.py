"""Parameter update rules: SGD with momentum for training, Adam for attacks."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class MissingGradient(RuntimeError):
    """A parameter had no gradient when the optimizer tried to step."""


class SgdMomentum:
    """v <- momentum*v - lr*(grad + decay*param); param <- param + v."""

    kind = "sgd-momentum"

    def __init__(self, params: list[Tensor], learning_rate: float,
                 momentum: float = 0.0, decay: float = 0.0):
        self.params = params
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.decay = decay
        self.velocity = [np.zeros_like(p.data) for p in params]
        self.step_count = 0

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGradient(f"parameter {i} has no gradient")
            g = p.grad + self.decay * p.data if self.decay else p.grad
            v = self.velocity[i]
            v *= self.momentum
            v -= self.learning_rate * g
            p.data += v
        self.step_count += 1


class Adam:
    """Bias-corrected adaptive-moment update (beta1=0.9, beta2=0.999, eps=1e-8)."""

    kind = "adaptive-moment"

    def __init__(self, params: list[Tensor], learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.step_count = 0

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise MissingGradient(f"parameter {i} has no gradient")
            m = self.m[i]
            v = self.v[i]
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * (p.grad * p.grad)
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            p.data -= self.learning_rate * mhat / (np.sqrt(vhat) + self.eps)
