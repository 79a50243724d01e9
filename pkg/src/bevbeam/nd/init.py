"""Parameter initialization helpers. All draws come from a caller-supplied rng."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def kaiming_normal(shape, fan_in: int, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    """He initialization for layers followed by ReLU."""
    std = np.sqrt(2.0 / fan_in)
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


def xavier_uniform(shape, fan_in: int, fan_out: int, rng: np.random.Generator,
                   dtype=np.float32) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def normal(shape, std: float, rng: np.random.Generator, dtype=np.float32) -> Tensor:
    return Tensor((rng.standard_normal(shape) * std).astype(dtype), requires_grad=True)


def zeros(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def ones(shape, dtype=np.float32) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)
