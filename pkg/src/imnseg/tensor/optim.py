"""Named parameters and the Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Tensor


class MissingGradientError(RuntimeError):
    pass


@dataclass
class Parameter:
    """A trainable tensor together with its Adam moment estimates."""

    name: str
    tensor: Tensor
    adam_m: np.ndarray = field(default=None, repr=False)
    adam_v: np.ndarray = field(default=None, repr=False)
    step_count: int = 0

    def __post_init__(self):
        self.tensor.requires_grad = True
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.tensor.values)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.tensor.values)

    @property
    def values(self) -> np.ndarray:
        return self.tensor.values

    @property
    def grad(self):
        return self.tensor.grad


def adam_step(params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """One bias-corrected Adam update of every parameter, then clear gradients.

    No weight decay is applied.
    """
    params = list(params)
    missing = [p.name for p in params if p.tensor.grad is None]
    if missing:
        raise MissingGradientError(f"no gradient for parameter(s): {', '.join(missing[:5])}")
    for p in params:
        g = p.tensor.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m *= beta1
        p.adam_m += (1 - beta1) * g
        p.adam_v *= beta2
        p.adam_v += (1 - beta2) * (g * g)
        m_hat = p.adam_m / (1 - beta1 ** t)
        v_hat = p.adam_v / (1 - beta2 ** t)
        p.tensor.values -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.tensor.dtype)
        p.tensor.grad = None


@dataclass
class Adam:
    """Adam hyperparameters; defaults are lr 1e-4, betas (0.9, 0.999), eps 1e-8."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def step(self, params) -> None:
        adam_step(params, self.lr, self.beta1, self.beta2, self.eps)
