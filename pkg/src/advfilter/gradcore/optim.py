from __future__ import annotations

from typing import Sequence

import numpy as np

from advfilter.errors import ContractError, NumericalError
from advfilter.gradcore.tensor import Tensor


class Adam:
    """Adaptive-moment gradient descent with optional L2 weight decay.

    Parameters are updated in place. ``step()`` reads ``p.grad`` unless an
    explicit gradient list is passed.
    """

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray | None] | None = None) -> None:
        if grads is None:
            grads = [p.grad for p in self.params]
        if len(grads) != len(self.params):
            raise ContractError(f"{len(grads)} gradients for {len(self.params)} parameters")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ContractError(f"gradient shape {g.shape} does not match parameter shape {p.data.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            with np.errstate(over="ignore", invalid="ignore"):  # caught by the finite check below
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
                p.data -= self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)
            if not np.all(np.isfinite(p.data)):
                raise NumericalError(f"parameter {i} became non-finite at optimizer step {self.t}")
