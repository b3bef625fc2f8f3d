"""Weight initializers. All draws come from a caller-supplied Generator."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


def trunc_normal(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> Tensor:
    """Normal(0, std) redrawn until every entry lies within two deviations."""
    x = rng.normal(0.0, std, shape)
    mask = np.abs(x) > 2.0 * std
    while mask.any():
        x[mask] = rng.normal(0.0, std, int(mask.sum()))
        mask = np.abs(x) > 2.0 * std
    return Tensor(x, requires_grad=True)


def conv_fan_out(rng: np.random.Generator, shape: tuple[int, ...], groups: int = 1) -> Tensor:
    """Kaiming-style init for conv weights ``(O, C/groups, kh, kw)``."""
    o, _, kh, kw = shape
    fan_out = kh * kw * o // groups
    std = math.sqrt(2.0 / fan_out)
    return Tensor(rng.normal(0.0, std, shape), requires_grad=True)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape: tuple[int, ...]) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)
