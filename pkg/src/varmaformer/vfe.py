"""Patch-level AR / MA feature extraction and fusion.

For patch index t (1-based) the AR branch projects the concatenation of
``phi_i * x[t-i]`` for i = 1..p, and the MA branch projects the concatenation of
``theta_j * e[t-j]`` where ``e[s] = x[s] - x[s-1]`` is the first-difference
innovation proxy. Lags below index 1 contribute zero vectors and ``e[s]`` is
zero whenever ``s`` or ``s-1`` falls below 1, so features at t only see
patches strictly before t.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import ParameterRegistry, Tensor
from .layers import Linear


@dataclass(frozen=True)
class VfeConfig:
    p: int = 2
    q: int = 2
    patch_len: int = 24
    d_model: int = 128

    def __post_init__(self) -> None:
        if self.p < 0 or self.q < 0:
            raise ValueError(f"AR/MA orders must be nonnegative, got p={self.p}, q={self.q}")
        if self.d_model % 2:
            raise ValueError(f"d_model must be even for the AR/MA halves, got {self.d_model}")
        if self.patch_len < 1:
            raise ValueError("patch_len must be positive")

    @property
    def enabled(self) -> bool:
        return self.p > 0 or self.q > 0


def innovations(patches: Tensor) -> Tensor:
    """First differences along the patch axis; the first patch has no predecessor, so zero."""
    diff = ag.sub(patches, ag.shift(patches, 1, axis=-2))
    keep = np.ones((patches.shape[-2], 1), dtype=patches.dtype)
    keep[0] = 0.0
    return ag.mul(diff, keep)


class VarmaFeatureExtractor:
    """Owns phi/theta and the three projections under ``prefix`` in the registry."""

    def __init__(self, cfg: VfeConfig, registry: ParameterRegistry, rng: np.random.Generator,
                 prefix: str = "vfe") -> None:
        self.cfg = cfg
        half = cfg.d_model // 2
        P = cfg.patch_len
        self.phi = [registry.add(f"{prefix}.phi.{i}", np.array(1.0 / cfg.p))
                    for i in range(1, cfg.p + 1)]
        self.theta = [registry.add(f"{prefix}.theta.{j}", np.array(1.0 / cfg.q))
                      for j in range(1, cfg.q + 1)]
        self.proj_ar = Linear(registry, f"{prefix}.proj_ar", cfg.p * P, half, rng) if cfg.p else None
        self.proj_ma = Linear(registry, f"{prefix}.proj_ma", cfg.q * P, half, rng) if cfg.q else None
        self.w_fuse = Linear(registry, f"{prefix}.fuse", cfg.d_model, cfg.d_model, rng) if cfg.enabled else None

    def _check(self, patches: Tensor) -> None:
        if patches.ndim < 2 or patches.shape[-1] != self.cfg.patch_len:
            raise ag.ShapeError("vfe", patches.shape, (-1, self.cfg.patch_len))

    def _zeros_half(self, patches: Tensor) -> Tensor:
        return ag.Tensor(np.zeros(patches.shape[:-1] + (self.cfg.d_model // 2,), dtype=patches.dtype))

    def _lagged(self, series: Tensor, weights) -> Tensor:
        parts = [ag.mul(ag.shift(series, k, axis=-2), w) for k, w in enumerate(weights, start=1)]
        return parts[0] if len(parts) == 1 else ag.concat(parts, axis=-1)

    def ar_features(self, patches: Tensor) -> Tensor:
        """(..., N, P) -> (..., N, D/2); a zero tensor when p = 0."""
        self._check(patches)
        if not self.cfg.p:
            return self._zeros_half(patches)
        return self.proj_ar(self._lagged(patches, self.phi))

    def ma_features(self, patches: Tensor) -> Tensor:
        """(..., N, P) -> (..., N, D/2); a zero tensor when q = 0."""
        self._check(patches)
        if not self.cfg.q:
            return self._zeros_half(patches)
        return self.proj_ma(self._lagged(innovations(patches), self.theta))

    def fuse(self, z_ar: Tensor, z_ma: Tensor) -> Tensor:
        if z_ar.shape != z_ma.shape:
            raise ag.ShapeError("vfe.fuse", z_ar.shape, z_ma.shape)
        if self.w_fuse is None:
            raise RuntimeError("fuse called on a disabled extractor (p = q = 0)")
        return self.w_fuse(ag.concat([z_ar, z_ma], axis=-1))

    def __call__(self, patches) -> Tensor:
        patches = ag.as_tensor(patches)
        return self.fuse(self.ar_features(patches), self.ma_features(patches))
