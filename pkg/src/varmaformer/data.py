"""CSV ingestion, chronological splits, windowing, instance normalization and patching."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-5


class DataError(ValueError):
    """Raised for unusable input data (bad file, gaps, too short, ...)."""


@dataclass
class Dataset:
    name: str
    values: np.ndarray  # (T_total, C), time-major
    channel_names: list[str]
    frequency: str = ""
    timestamps: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"values must be 2-D (time, channel), got {self.values.shape}")
        if len(self.channel_names) != self.values.shape[1]:
            raise DataError("channel_names length does not match column count")
        if not np.all(np.isfinite(self.values)):
            raise DataError(f"{self.name}: dataset contains missing or non-finite values")

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def to_csv(self, path: str | os.PathLike) -> None:
        """Write in the same layout ``ingest_csv`` reads."""
        if self.timestamps is not None:
            stamps = pd.DatetimeIndex(self.timestamps)
        else:
            stamps = pd.date_range("2000-01-01", periods=len(self), freq="h")
        frame = pd.DataFrame(self.values, columns=self.channel_names)
        frame.insert(0, "date", stamps.strftime("%Y-%m-%d %H:%M:%S"))
        frame.to_csv(path, index=False, float_format="%.10g")


def ingest_csv(path: str | os.PathLike, schema: Sequence[str] | None = None,
               name: str | None = None) -> Dataset:
    """Read a timestamp-first CSV into a ``Dataset``.

    Rejects missing cells, non-numeric cells, duplicate or decreasing
    timestamps, and irregular spacing (gaps).
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise DataError(f"dataset not found: {path}")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    if frame.shape[1] < 2:
        raise DataError(f"{path}: need a timestamp column and at least one value column")
    columns = [str(c).strip() for c in frame.columns]
    channels = columns[1:]
    if schema is not None and list(schema) != channels:
        raise DataError(f"{path}: expected channels {list(schema)}, found {channels}")

    values = np.empty((len(frame), len(channels)), dtype=np.float64)
    for j, col in enumerate(frame.columns[1:]):
        parsed = pd.to_numeric(frame[col].str.strip(), errors="coerce")
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            raise DataError(f"{path}: non-numeric value {frame[col].iloc[row]!r} "
                            f"at row {row + 2}, column {channels[j]!r}")
        values[:, j] = parsed.to_numpy(dtype=np.float64)

    try:
        stamps = pd.to_datetime(frame.iloc[:, 0].str.strip(), format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise DataError(f"{path}: unparseable timestamp ({exc})") from None
    stamps = stamps.to_numpy()
    _check_timestamps(path, stamps)

    freq = ""
    if len(stamps) > 1:
        freq = str(pd.Timedelta(stamps[1] - stamps[0]))
    name = name or os.path.splitext(os.path.basename(path))[0]
    logger.info("ingested %s: %d rows x %d channels", name, len(frame), len(channels))
    return Dataset(name=name, values=values, channel_names=channels, frequency=freq,
                   timestamps=stamps)


def _check_timestamps(path: str, stamps: np.ndarray) -> None:
    if len(stamps) < 2:
        return
    steps = np.diff(stamps).astype("timedelta64[ns]").astype(np.int64)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        i = int(bad[0])
        kind = "duplicate" if steps[i] == 0 else "non-monotone"
        raise DataError(f"{path}: {kind} timestamp at row {i + 3}")
    # the most common step is the sampling interval; anything else is a gap
    uniq, counts = np.unique(steps, return_counts=True)
    base = uniq[np.argmax(counts)]
    off = np.flatnonzero(steps != base)
    if off.size:
        i = int(off[0])
        raise DataError(f"{path}: gap in timestamps between rows {i + 2} and {i + 3}")


# ---------------------------------------------------------------------------
# splits


@dataclass(frozen=True)
class SplitPolicy:
    """``kind`` is one of ``ratio``, ``ett-hourly``, ``ett-minute`` or ``auto``."""

    kind: str = "auto"
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)

    def resolve(self, dataset_name: str) -> "SplitPolicy":
        if self.kind != "auto":
            return self
        upper = dataset_name.upper()
        if upper.startswith("ETTH"):
            return SplitPolicy("ett-hourly", self.ratios)
        if upper.startswith("ETTM"):
            return SplitPolicy("ett-minute", self.ratios)
        return SplitPolicy("ratio", self.ratios)


# 12/4/4 months of 30 days
_ETT_MONTH_HOURS = 30 * 24


def split(ds: Dataset | int, policy: SplitPolicy = SplitPolicy(), lookback: int = 96,
          horizon: int = 96) -> tuple[range, range, range]:
    """Chronological, contiguous, non-overlapping train/val/test index ranges."""
    if isinstance(ds, Dataset):
        n, name = len(ds), ds.name
    else:
        n, name = int(ds), ""
    policy = policy.resolve(name)
    if policy.kind in ("ett-hourly", "ett-minute"):
        per_month = _ETT_MONTH_HOURS * (4 if policy.kind == "ett-minute" else 1)
        n_train, n_val, n_test = 12 * per_month, 4 * per_month, 4 * per_month
        if n < n_train + n_val + n_test:
            raise DataError(f"dataset too short for {policy.kind} split: {n} rows, "
                            f"need {n_train + n_val + n_test}")
    elif policy.kind == "ratio":
        r_train, r_val, r_test = policy.ratios
        if min(policy.ratios) < 0 or not math.isclose(r_train + r_val + r_test, 1.0):
            raise ValueError(f"split ratios must be nonnegative and sum to 1: {policy.ratios}")
        n_train = int(n * r_train)
        n_test = int(n * r_test)
        n_val = n - n_train - n_test
    else:
        raise ValueError(f"unknown split policy {policy.kind!r}")

    ranges = (range(0, n_train), range(n_train, n_train + n_val),
              range(n_train + n_val, n_train + n_val + n_test))
    need = lookback + horizon
    for label, r in zip(("train", "validation", "test"), ranges):
        if len(r) < need:
            raise DataError(f"dataset too short: {label} range has {len(r)} rows, "
                            f"need at least L+T={need}")
    return ranges


class StandardScaler:
    """Dataset-level z-scoring fitted on the training range (population std)."""

    def __init__(self) -> None:
        self.mean: np.ndarray | None = None
        self.std: np.ndarray | None = None

    def fit(self, values: np.ndarray) -> "StandardScaler":
        self.mean = values.mean(axis=0)
        self.std = np.maximum(values.std(axis=0), SIGMA_FLOOR)
        return self

    def transform(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / self.std

    def inverse_transform(self, values: np.ndarray) -> np.ndarray:
        return values * self.std + self.mean


# ---------------------------------------------------------------------------
# windows


@dataclass
class SeriesWindow:
    lookback: np.ndarray  # (C, L)
    target: np.ndarray  # (C, T)
    mu: np.ndarray
    sigma: np.ndarray
    origin: int = 0

    @classmethod
    def from_arrays(cls, lookback: np.ndarray, target: np.ndarray, origin: int = 0) -> "SeriesWindow":
        _, mu, sigma = normalize_window(lookback)
        return cls(np.asarray(lookback, dtype=np.float64), np.asarray(target, dtype=np.float64),
                   mu, sigma, origin)


@dataclass
class WindowSet:
    """Stacked windows for batched training / evaluation.

    ``x`` is (S, C, L) and ``y`` is (S, C, T); row ``i`` starts at ``origins[i]``.
    """

    x: np.ndarray
    y: np.ndarray
    origins: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, idx) -> "WindowSet":
        return WindowSet(self.x[idx], self.y[idx], self.origins[idx])

    def window(self, i: int) -> SeriesWindow:
        return SeriesWindow.from_arrays(self.x[i], self.y[i], int(self.origins[i]))

    def batches(self, batch_size: int, rng: np.random.Generator | None = None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            yield self[order[start:start + batch_size]]


def make_windows(values: np.ndarray, index_range: range, lookback: int, horizon: int) -> WindowSet:
    """Every stride-1 (look-back, horizon) window lying fully inside ``index_range``.

    ``values`` is time-major (T_total, C).
    """
    lo, hi = index_range.start, index_range.stop
    count = (hi - lo) - lookback - horizon + 1
    if count < 1:
        raise DataError(f"range of {hi - lo} rows cannot hold a window of L+T={lookback + horizon}")
    seg = np.ascontiguousarray(values[lo:hi].T)  # (C, n)
    full = np.lib.stride_tricks.sliding_window_view(seg, lookback + horizon, axis=1)
    full = full[:, :count].transpose(1, 0, 2)  # (S, C, L+T)
    x = np.array(full[:, :, :lookback])
    y = np.array(full[:, :, lookback:])
    return WindowSet(x, y, np.arange(lo, lo + count, dtype=np.int64))


# ---------------------------------------------------------------------------
# instance normalization and patches


def normalize_window(raw: np.ndarray, eps: float = SIGMA_FLOOR):
    """Per-channel z-score over the last axis (population std, floored at ``eps``).

    Works on (C, L) or any (..., L) array; returns (normalized, mu, sigma) with
    mu/sigma keeping a trailing singleton axis stripped.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape[-1] < 2:
        raise ValueError("normalize_window needs at least 2 time steps")
    mu = raw.mean(axis=-1)
    sigma = np.maximum(raw.std(axis=-1), eps)
    return (raw - mu[..., None]) / sigma[..., None], mu, sigma


def denormalize(pred: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != pred.shape[:-1] or sigma.shape != pred.shape[:-1]:
        raise ValueError(f"denormalize: shapes {pred.shape}, mu {mu.shape}, sigma {sigma.shape} "
                         "do not conform")
    return pred * sigma[..., None] + mu[..., None]


@dataclass
class PatchSequence:
    patches: np.ndarray  # (..., N, P)
    patch_length: int
    count: int
    padded: int

    def unpatchify(self) -> np.ndarray:
        flat = self.patches.reshape(*self.patches.shape[:-2], self.count * self.patch_length)
        return flat[..., :flat.shape[-1] - self.padded] if self.padded else flat


def patchify(normalized: np.ndarray, patch_length: int) -> PatchSequence:
    """Cut the last axis into ceil(L/P) patches, replicating the final value into the tail."""
    if patch_length <= 0:
        raise ValueError(f"patch length must be positive, got {patch_length}")
    x = np.asarray(normalized)
    length = x.shape[-1]
    count = -(-length // patch_length)
    pad = count * patch_length - length
    if pad:
        x = np.concatenate([x, np.repeat(x[..., -1:], pad, axis=-1)], axis=-1)
    patches = x.reshape(*x.shape[:-1], count, patch_length)
    return PatchSequence(patches, patch_length, count, pad)


def unpatchify(seq: PatchSequence) -> np.ndarray:
    return seq.unpatchify()
