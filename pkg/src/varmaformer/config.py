"""Flat ``key = value`` experiment configuration."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .data import SplitPolicy
from .model import ConfigError, ModelConfig
from .train import TrainConfig


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class ExperimentConfig:
    # data
    dataset: str = ""
    split: str = "auto"
    split_ratios: str = "0.7,0.1,0.2"
    out: str = "runs"
    # model
    lookback: int = 96
    horizon: int = 96
    horizons: str = ""
    patch_len: int = 24
    d_model: int = 128
    n_layers: int = 3
    n_heads: int = 4
    p: int = 2
    q: int = 2
    alpha: float = 0.3
    beta: float = 0.3
    mask_rate: float = 0.25
    ffn_width: int = 256
    ve_atten: bool = True
    train_alpha: bool = False
    # training
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    weight_decay: float = 0.0
    seed: int = 2021
    seeds: str = ""
    dtype: str = "float64"

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def load(cls, path: str | None = None, overrides: list[str] | None = None) -> "ExperimentConfig":
        pairs: list[tuple[str, str, str]] = []
        if path:
            if not os.path.isfile(path):
                raise ConfigError(f"config not found: {path}")
            with open(path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                    k, v = line.split("=", 1)
                    pairs.append((k.strip(), v.strip(), f"{path}:{lineno}"))
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            pairs.append((k.strip(), v.strip(), "--override"))
        cfg = cls()
        cfg.update(pairs)
        return cfg

    def update(self, pairs) -> None:
        types = {f.name: f.type for f in fields(self)}
        for key, value, where in pairs:
            if key not in types:
                raise ConfigError(f"{where}: unknown config key {key!r}")
            kind = types[key]
            try:
                if kind == "int":
                    parsed = int(value)
                elif kind == "float":
                    parsed = float(value)
                elif kind == "bool":
                    parsed = _bool(value)
                else:
                    parsed = value
            except ValueError:
                raise ConfigError(f"{where}: bad value {value!r} for {key}") from None
            setattr(self, key, parsed)

    # -- derived objects -----------------------------------------------
    def seed_list(self) -> list[int]:
        return _int_list(self.seeds) or [self.seed]

    def horizon_list(self) -> list[int]:
        return _int_list(self.horizons) or [self.horizon]

    def split_policy(self) -> SplitPolicy:
        ratios = tuple(float(r) for r in self.split_ratios.split(","))
        if len(ratios) != 3:
            raise ConfigError("split_ratios needs three comma-separated numbers")
        return SplitPolicy(self.split, ratios)

    def model_config(self, **changes) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        values = {k: getattr(self, k) for k in names if hasattr(self, k)}
        values.update(changes)
        return ModelConfig(**values)

    def train_config(self, **changes) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        values = {k: getattr(self, k) for k in names if hasattr(self, k)}
        values.update(changes)
        return TrainConfig(**values)
