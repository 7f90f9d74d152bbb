"""Glue between data, model and trainer: prepared splits, single runs, ablation and sweep grids."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import Dataset, SplitPolicy, StandardScaler, WindowSet, make_windows, split
from .model import ModelConfig, VARMAformer
from .oracle import LinearBaseline, PersistenceBaseline
from .train import MetricRow, TrainConfig, TrainResult, evaluate, train

logger = logging.getLogger(__name__)

# (label, AR on, MA on, gate on) in the row order of the ablation table
ABLATIONS = [
    ("none", False, False, False),
    ("AR", True, False, False),
    ("MA", False, True, False),
    ("AR+MA", True, True, False),
    ("VE-atten", False, False, True),
    ("all", True, True, True),
]

SWEEPABLE = {"p": int, "q": int, "alpha": float, "beta": float}


@dataclass
class PreparedData:
    dataset: str
    scaler: StandardScaler
    train: WindowSet
    val: WindowSet
    test: WindowSet


def prepare(ds: Dataset, lookback: int, horizon: int,
            policy: SplitPolicy = SplitPolicy()) -> PreparedData:
    """Split chronologically, z-score with train statistics, and cut stride-1 windows."""
    r_train, r_val, r_test = split(ds, policy, lookback, horizon)
    scaler = StandardScaler().fit(ds.values[r_train.start:r_train.stop])
    scaled = scaler.transform(ds.values)
    return PreparedData(
        ds.name, scaler,
        make_windows(scaled, r_train, lookback, horizon),
        make_windows(scaled, r_val, lookback, horizon),
        make_windows(scaled, r_test, lookback, horizon),
    )


@dataclass
class RunOutcome:
    model: VARMAformer
    result: TrainResult
    test: dict
    wall_time_s: float


def run(data: PreparedData, model_cfg: ModelConfig, train_cfg: TrainConfig) -> RunOutcome:
    start = time.perf_counter()
    model = VARMAformer(model_cfg)
    result = train(model, data.train, data.val, train_cfg)
    test = evaluate(model, data.test)
    return RunOutcome(model, result, test, time.perf_counter() - start)


def baseline_metrics(data: PreparedData, horizon: int) -> dict[str, dict]:
    out = {}
    for name, predictor in (("persistence", PersistenceBaseline(horizon)),
                            ("linear", LinearBaseline().fit(data.train))):
        err = predictor.predict(data.test.x) - data.test.y
        out[name] = {"mse": float(np.mean(err ** 2)), "mae": float(np.mean(np.abs(err)))}
    return out


def ablation_config(base: ModelConfig, label: str) -> ModelConfig:
    for name, ar, ma, gate in ABLATIONS:
        if name == label:
            return base.replace(p=base.p if ar else 0, q=base.q if ma else 0, ve_atten=gate)
    raise KeyError(f"unknown ablation {label!r}")


def _row(data: PreparedData, horizon: int, label: str, seed: int, out: RunOutcome) -> MetricRow:
    return MetricRow(data.dataset, horizon, label, seed, out.result.best_epoch, "test",
                     out.test["mse"], out.test["mae"], out.wall_time_s)


def ablation_grid(ds: Dataset, base: ModelConfig, train_cfg: TrainConfig, horizons: Sequence[int],
                  seeds: Sequence[int], policy: SplitPolicy = SplitPolicy(),
                  labels: Sequence[str] | None = None) -> list[MetricRow]:
    labels = list(labels or [a[0] for a in ABLATIONS])
    rows = []
    for horizon in horizons:
        data = prepare(ds, base.lookback, horizon, policy)
        for label in labels:
            for seed in seeds:
                cfg = ablation_config(base.replace(horizon=horizon, seed=seed), label)
                out = run(data, cfg, TrainConfig(**{**train_cfg.__dict__, "seed": seed}))
                rows.append(_row(data, horizon, label, seed, out))
                logger.info("ablation %s h=%d seed=%d mse=%.4f", label, horizon, seed, out.test["mse"])
    return rows


def sweep_settings(params: Sequence[str], values: Sequence[str]) -> list[dict]:
    """Cartesian grid of ``values`` over every named parameter."""
    if not params or not values:
        raise ValueError("sweep needs at least one parameter and one value")
    for p in params:
        if p not in SWEEPABLE:
            raise ValueError(f"cannot sweep {p!r}; choose from {sorted(SWEEPABLE)}")
    grid = []
    for combo in itertools.product(values, repeat=len(params)):
        grid.append({p: SWEEPABLE[p](v) for p, v in zip(params, combo)})
    return grid


def sweep_grid(ds: Dataset, base: ModelConfig, train_cfg: TrainConfig, settings: Sequence[dict],
               horizons: Sequence[int], seeds: Sequence[int],
               policy: SplitPolicy = SplitPolicy()) -> list[MetricRow]:
    rows = []
    for horizon in horizons:
        data = prepare(ds, base.lookback, horizon, policy)
        for setting in settings:
            label = ";".join(f"{k}={v}" for k, v in setting.items())
            for seed in seeds:
                cfg = base.replace(horizon=horizon, seed=seed, **setting)
                out = run(data, cfg, TrainConfig(**{**train_cfg.__dict__, "seed": seed}))
                rows.append(_row(data, horizon, label, seed, out))
    return rows
