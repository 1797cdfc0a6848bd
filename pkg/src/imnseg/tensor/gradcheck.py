"""Central finite-difference check of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..rng import SplitMix64
from .core import Tensor, no_grad
from .ops import weighted_sum


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))


def gradient_check(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-3,
                   seed: int = 0, wrt: Sequence[int] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps tensors to a tensor of any shape; its output is projected to
    a scalar with fixed random weights so every output element is exercised.
    Everything runs in float64.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    wrt = list(wrt)

    tensors = [Tensor(a.copy(), requires_grad=(i in wrt)) for i, a in enumerate(arrays)]
    out = fn(*tensors)
    proj = SplitMix64(seed).uniform_range(-1.0, 1.0, out.values.size).reshape(out.dims)
    weighted_sum(out, proj).backward()

    def objective(arrs):
        with no_grad():
            res = fn(*[Tensor(a) for a in arrs])
        return float((res.values * proj).sum())

    worst = 0.0
    for i in wrt:
        analytic = tensors[i].grad
        if analytic is None:
            analytic = np.zeros_like(arrays[i])
        numeric = np.zeros_like(arrays[i])
        flat = arrays[i].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = objective(arrays)
            flat[k] = orig - h
            fm = objective(arrays)
            flat[k] = orig
            numeric.reshape(-1)[k] = (fp - fm) / (2 * h)
        worst = max(worst, float(relative_error(analytic, numeric).max(initial=0.0)))
    return worst
