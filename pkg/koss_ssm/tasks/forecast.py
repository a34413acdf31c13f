"""
CSV forecasting pipeline: loading, 7:1:2 splits, train-split normalisation,
sliding windows, SNR-controlled noise and the persistence baseline.
"""
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numpy.lib.stride_tricks import sliding_window_view

from koss_ssm.errors import ConfigError, DatasetError
from koss_ssm.utils.logging import logger
from koss_ssm.utils.rng import STREAM_NOISE, make_rng

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class ForecastDataset:
    values: np.ndarray  # (T, D) raw
    columns: List[str]
    train_end: int
    val_end: int
    stats: NormStats

    def bounds(self, split: str) -> Tuple[int, int]:
        if split == "train":
            return 0, self.train_end
        if split == "val":
            return self.train_end, self.val_end
        if split == "test":
            return self.val_end, len(self.values)
        raise ConfigError(f"unknown split '{split}', expected one of {SPLITS}")

    def split(self, split: str, normalized: bool = True) -> np.ndarray:
        lo, hi = self.bounds(split)
        part = self.values[lo:hi]
        return normalize(part, self.stats) if normalized else part

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]


def split_points(total: int, ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)) -> Tuple[int, int]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or not math.isclose(sum(ratios), 1.0):
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    return int(math.floor(ratios[0] * total + 1e-9)), int(math.floor((ratios[0] + ratios[1]) * total + 1e-9))


def compute_stats(train: np.ndarray, columns: Optional[List[str]] = None) -> NormStats:
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = np.flatnonzero(~(std > 0))
    if flat.size:
        name = columns[flat[0]] if columns else str(flat[0])
        raise DatasetError(f"column '{name}' is constant on the training split")
    return NormStats(mean=mean, std=std)


def load_csv_dataset(path: Union[str, Path], has_timestamp: bool = False,
                     ratios: Tuple[float, float, float] = (0.7, 0.1, 0.2)) -> ForecastDataset:
    """
    Read a CSV with a header row and numeric columns.

    Raises:
        DatasetError: empty file, malformed row (1-based file line reported),
            constant column or a training split shorter than two rows
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DatasetError(f"dataset file is empty: {path}")
    except pd.errors.ParserError as e:
        raise DatasetError(f"cannot parse {path}: {e}")
    if has_timestamp:
        frame = frame.iloc[:, 1:]
    if frame.shape[0] == 0 or frame.shape[1] == 0:
        raise DatasetError(f"dataset has no numeric data: {path}")

    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().any(axis=1) | ~np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
    if bad.any():
        # header is line 1
        raise DatasetError("malformed row", row=int(np.flatnonzero(bad.to_numpy())[0]) + 2)

    values = numeric.to_numpy(dtype=np.float64)
    columns = [str(c) for c in frame.columns]
    train_end, val_end = split_points(len(values), ratios)
    if train_end < 2 or val_end <= train_end or val_end >= len(values):
        raise DatasetError(f"{len(values)} rows are too few for a train/val/test split")
    stats = compute_stats(values[:train_end], columns)
    logger.info(f"Loaded {path}: {len(values)} rows x {len(columns)} columns (train {train_end}, val {val_end - train_end})")
    return ForecastDataset(values=values, columns=columns, train_end=train_end, val_end=val_end, stats=stats)


def normalize(x, stats: NormStats) -> np.ndarray:
    """(x - mean) / std per column."""
    if not np.all(stats.std > 0):
        raise ConfigError("normalisation needs std > 0 in every column")
    return (np.asarray(x, dtype=np.float64) - stats.mean) / stats.std


def denormalize(y, stats: NormStats) -> np.ndarray:
    if not np.all(stats.std > 0):
        raise ConfigError("normalisation needs std > 0 in every column")
    return np.asarray(y, dtype=np.float64) * stats.std + stats.mean


def windowize(series, lookback: int, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stride-1 windows of one split.

    Returns:
        inputs (W, lookback, D) and targets (W, horizon, D), W = N - lookback - horizon + 1
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim == 1:
        series = series[:, None]
    span = lookback + horizon
    if lookback < 1 or horizon < 1:
        raise ConfigError("lookback and horizon must be >= 1")
    if len(series) < span:
        raise DatasetError(f"split of length {len(series)} is too short for lookback {lookback} + horizon {horizon}")
    windows = sliding_window_view(series, span, axis=0)  # (W, D, span)
    windows = np.moveaxis(windows, -1, 1)
    return windows[:, :lookback].copy(), windows[:, lookback:].copy()


def add_noise_snr(x, snr_db: Optional[float], seed: int) -> np.ndarray:
    """
    Add N(0, sigma_i^2 / 10^(snr_db / 10)) noise to every column i.

    ``snr_db`` of None or +inf leaves the data unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    if snr_db is None or snr_db == math.inf:
        return x.copy()
    if not math.isfinite(snr_db):
        raise ConfigError(f"snr_db must be finite, got {snr_db}")
    data = x if x.ndim > 1 else x[:, None]
    sigma = data.std(axis=0)
    if not np.all(sigma > 0):
        raise ConfigError("cannot set an SNR on a zero-variance column")
    noise = make_rng(seed, STREAM_NOISE).normal(size=data.shape) * (sigma / math.sqrt(10.0 ** (snr_db / 10.0)))
    return (data + noise).reshape(x.shape)


def persistence_forecast(inputs, horizon: int) -> np.ndarray:
    """Repeat the last observed value of every window ``horizon`` times."""
    inputs = np.asarray(inputs)
    return np.repeat(inputs[:, -1:, :], horizon, axis=1)


def make_sine_dataset(path: Union[str, Path], length: int = 8000, n_channels: int = 4, seed: int = 0,
                      noise_std: float = 0.1) -> Path:
    """Write a multi-sine plus Gaussian-noise CSV with a leading ``date`` column."""
    if length < 10 or n_channels < 1:
        raise ConfigError("make_sine_dataset needs length >= 10 and n_channels >= 1")
    rng = make_rng(seed, STREAM_NOISE)
    t = np.arange(length, dtype=np.float64)
    periods = np.array([24.0, 48.0, 168.0, 12.0])
    data = {"date": pd.date_range("2020-01-01", periods=length, freq="h").strftime("%Y-%m-%d %H:%M:%S")}
    for ch in range(n_channels):
        amps = rng.uniform(0.5, 1.5, size=len(periods))
        phases = rng.uniform(0.0, 2.0 * math.pi, size=len(periods))
        signal = sum(a * np.sin(2.0 * math.pi * t / p + ph) for a, p, ph in zip(amps, periods, phases))
        data[f"ch{ch}"] = signal + noise_std * rng.normal(size=length)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(data).to_csv(path, index=False)
    return path


class ForecastWindows:
    """Train/val/test windows of a normalised dataset in the shape the training loop expects."""

    def __init__(self, dataset: ForecastDataset, lookback: int, horizon: int):
        self.dataset = dataset
        self.lookback = lookback
        self.horizon = horizon
        self.windows = {name: windowize(dataset.split(name), lookback, horizon) for name in SPLITS}

    def train_batch(self, rng: np.random.Generator, batch_size: int) -> dict:
        inputs, targets = self.windows["train"]
        idx = rng.integers(0, len(inputs), size=batch_size)
        return {"inputs": inputs[idx], "targets": targets[idx]}

    def batches(self, split: str, batch_size: int) -> List[dict]:
        inputs, targets = self.windows[split]
        return [{"inputs": inputs[i:i + batch_size], "targets": targets[i:i + batch_size]}
                for i in range(0, len(inputs), batch_size)]

    def val_batches(self, batch_size: int) -> List[dict]:
        return self.batches("val", batch_size)
