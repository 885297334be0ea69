"""
`hieraseg` SGD with momentum.
"""

from __future__ import annotations

import logging
from typing import Iterable

import numpy as np

from hieraseg.exceptions import NumericalError, ValidationError

from .nn import Parameter

logger = logging.getLogger(__name__)


class SgdOptimizer:
    """
    Heavy-ball SGD: `v <- m * v + g; p <- p - lr * v`, then gradients are
    cleared. Frozen parameters are refused at registration.
    """

    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.0):
        if lr <= 0:
            raise ValidationError(f"Learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValidationError(f"Momentum must lie in [0, 1), got {momentum}")
        self.params: list[Parameter] = []
        seen: set[int] = set()
        for param in params:
            if getattr(param, "frozen", False):
                raise ValidationError(f"Refusing to register frozen parameter {param!r}")
            if id(param) not in seen:
                seen.add(id(param))
                self.params.append(param)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.steps = 0

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = None

    def step(self) -> None:
        if all(param.grad is None for param in self.params):
            raise NumericalError("Optimizer step requested before any backward pass")
        for param, velocity in zip(self.params, self.velocity):
            grad = param.grad if param.grad is not None else 0.0
            velocity *= self.momentum
            velocity += grad
            param.data = param.data - self.lr * velocity
        self.steps += 1
        self.zero_grad()


def sgd_step(optimizer: SgdOptimizer) -> None:
    optimizer.step()
