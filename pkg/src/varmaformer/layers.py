"""Parameterized building blocks on top of the autograd ops."""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import ParameterRegistry, Tensor


def uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape)


class Linear:
    """Affine map ``x @ W + b`` with W stored as (in, out)."""

    def __init__(self, registry: ParameterRegistry, name: str, in_features: int,
                 out_features: int, rng: np.random.Generator, bias: bool = True) -> None:
        self.in_features = in_features
        self.out_features = out_features
        self.weight = registry.add(f"{name}.weight",
                                   uniform_fan_in(rng, in_features, (in_features, out_features)))
        self.bias = None
        if bias:
            self.bias = registry.add(f"{name}.bias", uniform_fan_in(rng, in_features, (out_features,)))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.linear(x, self.weight, self.bias)


class LayerNorm:
    def __init__(self, registry: ParameterRegistry, name: str, dim: int) -> None:
        self.gamma = registry.add(f"{name}.gamma", np.ones(dim))
        self.beta = registry.add(f"{name}.beta", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta)
