"""Mini-batch Adam training with validation-based selection, and MSE/MAE evaluation."""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Parameter
from .data import WindowSet

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
METRIC_FIELDS = ["dataset", "horizon", "ablation", "seed", "epoch", "split", "mse", "mae",
                 "wall_time_s"]


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int) -> None:
        self.epoch = epoch
        super().__init__(f"training diverged (non-finite loss) in epoch {epoch}")


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    learning_rate: float = 1e-3
    lr_decay: float = 0.5
    weight_decay: float = 0.0
    seed: int = 2021
    loss: str = "mse"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 0 <= self.patience <= self.max_epochs:
            raise ValueError("patience must lie in [0, max_epochs]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")


class Adam:
    def __init__(self, params: Sequence[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0) -> None:
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float
    val_mae: float
    lr: float
    wall_time_s: float


@dataclass
class TrainResult:
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = math.inf


def parameter_digest(model) -> str:
    h = hashlib.sha256()
    for name, p in model.params.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def train(model, train_set: WindowSet, val_set: WindowSet, cfg: TrainConfig,
          on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Fit ``model`` in place; the best-validation parameters are restored at the end."""
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("train and validation sets must be nonempty")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params.trainable(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    result = TrainResult()
    best_state = model.params.state_dict()
    bad_epochs = 0
    for epoch in range(1, cfg.max_epochs + 1):
        start = time.perf_counter()
        model.train()
        total, count = 0.0, 0
        for batch in train_set.batches(cfg.batch_size, rng):
            opt.zero_grad()
            loss = ag.mse_loss(model(batch.x), batch.y)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDiverged(epoch)
            loss.backward()
            opt.step()
            total += value * len(batch)
            count += len(batch)
        model.eval()
        val = evaluate(model, val_set, cfg.batch_size)
        rec = EpochRecord(epoch, total / count, val["mse"], val["mae"], opt.lr,
                          time.perf_counter() - start)
        result.history.append(rec)
        logger.info("epoch %d train_mse=%.5f val_mse=%.5f lr=%.2e", epoch, rec.train_mse,
                    rec.val_mse, opt.lr)
        if on_epoch is not None:
            on_epoch(rec)
        if not math.isfinite(rec.val_mse):
            raise TrainingDiverged(epoch)
        if rec.val_mse < result.best_val_mse:
            result.best_val_mse = rec.val_mse
            result.best_epoch = epoch
            best_state = model.params.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
            opt.lr *= cfg.lr_decay
        if bad_epochs >= cfg.patience:
            break
    model.params.load_state_dict(best_state)
    model.eval()
    return result


def evaluate(model, windows: WindowSet, batch_size: int = 256) -> dict:
    """MSE and MAE over every sample, channel and step, in the windows' own scale."""
    if len(windows) == 0:
        raise ValueError("cannot evaluate on an empty window set")
    preds = np.concatenate([model.predict(b.x) for b in windows.batches(batch_size)], axis=0)
    return metrics(preds, windows.y)


def metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    err = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return {"mse": float(np.mean(err * err)), "mae": float(np.mean(np.abs(err))),
            "n_samples": int(err.shape[0])}


# ---------------------------------------------------------------------------
# CSV reports


@dataclass
class MetricRow:
    dataset: str
    horizon: int
    ablation: str
    seed: int | str
    epoch: int | str
    split: str
    mse: float
    mae: float | None
    wall_time_s: float | str = ""


def format_rows(rows: Iterable[MetricRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# schema-version: {SCHEMA_VERSION}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for r in rows:
        d = asdict(r)
        for k in ("mse", "mae"):
            d[k] = "" if d[k] is None else f"{d[k]:.8g}"
        if isinstance(d["wall_time_s"], float):
            d["wall_time_s"] = f"{d['wall_time_s']:.3f}"
        writer.writerow([d[k] for k in METRIC_FIELDS])
    return buf.getvalue()


def write_rows(path, rows: Iterable[MetricRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_rows(rows))


def mean_rows(rows: Sequence[MetricRow]) -> list[MetricRow]:
    """One ``seed=mean`` row per (dataset, horizon, ablation, split) group with >1 seed."""
    groups: dict[tuple, list[MetricRow]] = {}
    for r in rows:
        groups.setdefault((r.dataset, r.horizon, r.ablation, r.split), []).append(r)
    out = []
    for (ds, h, ab, sp), members in groups.items():
        if len(members) < 2:
            continue
        out.append(MetricRow(ds, h, ab, "mean", "", sp,
                             float(np.mean([m.mse for m in members])),
                             float(np.mean([m.mae for m in members])), ""))
    return out
