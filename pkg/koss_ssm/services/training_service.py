"""
Training and evaluation runners for the copying and forecasting tasks.
"""
from pathlib import Path
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from koss_ssm.errors import ConfigError
from koss_ssm.models.schemas import CopyingConfig, ForecastConfig, HistoryRow, ModelConfig, TrainConfig
from koss_ssm.tasks.copying import CopyingDataset, gen_copying_batch
from koss_ssm.tasks.forecast import (ForecastDataset, ForecastWindows, compute_stats, add_noise_snr, denormalize,
                                     load_csv_dataset, persistence_forecast)
from koss_ssm.train.loop import TrainResult, train_loop
from koss_ssm.train.losses import mae, mse
from koss_ssm.train.model import CopyingModel, ForecastModel, Params, evaluate_batches
from koss_ssm.utils.artifacts import load_checkpoint, save_checkpoint
from koss_ssm.utils.logging import logger
from koss_ssm.utils.rng import STREAM_TEST

EpochCallback = Optional[Callable[[HistoryRow], None]]
DEFAULT_RATIOS = (0.0, 0.25, 0.5)


def copying_model(model_cfg: ModelConfig, copy_cfg: CopyingConfig, dtype="float64") -> CopyingModel:
    return CopyingModel(model_cfg, copy_cfg.vocab_size, copy_cfg.n_data_tokens, dtype=np.dtype(dtype))


def train_copying(model_cfg: ModelConfig, copy_cfg: CopyingConfig, train_cfg: TrainConfig,
                  on_epoch: EpochCallback = None) -> TrainResult:
    logger.info(f"Training copying model: L={copy_cfg.seq_len}, r={copy_cfg.interference_ratio}, "
                f"{train_cfg.steps} steps, gain input {model_cfg.gain_input}")
    model = copying_model(model_cfg, copy_cfg, train_cfg.dtype)
    return train_loop(model, CopyingDataset(copy_cfg), train_cfg, on_epoch=on_epoch)


def with_ratio(copy_cfg: CopyingConfig, ratio: float) -> CopyingConfig:
    return CopyingConfig(**{**copy_cfg.model_dump(), "interference_ratio": ratio})


def copying_test_batches(copy_cfg: CopyingConfig, n_sequences: int, batch_size: int):
    if n_sequences < 1:
        raise ConfigError("n_sequences must be >= 1")
    return [gen_copying_batch(copy_cfg, min(batch_size, n_sequences - i), stream=STREAM_TEST, offset=i)
            for i in range(0, n_sequences, batch_size)]


def eval_copying(params: Params, model_cfg: ModelConfig, copy_cfg: CopyingConfig,
                 ratios: Sequence[float] = DEFAULT_RATIOS, n_sequences: int = 256,
                 batch_size: int = 32) -> pd.DataFrame:
    """Accuracy and loss on held-out sequences at every interference ratio of the sweep."""
    model = copying_model(model_cfg, copy_cfg)
    rows = []
    for ratio in ratios:
        cfg = with_ratio(copy_cfg, ratio)
        metrics = evaluate_batches(model, params, copying_test_batches(cfg, n_sequences, batch_size))
        rows.append({"interference_ratio": ratio, "accuracy": metrics["accuracy"], "loss": metrics["loss"]})
        logger.info(f"copying eval r={ratio}: accuracy {metrics['accuracy']:.4f}")
    return pd.DataFrame(rows)


def copying_accuracy_at(params: Params, model_cfg: ModelConfig, copy_cfg: CopyingConfig,
                        n_sequences: int = 64, batch_size: int = 32) -> Callable[[int], float]:
    """Accuracy as a function of the segment length the trained stack is run with."""
    batches = copying_test_batches(copy_cfg, n_sequences, batch_size)

    def accuracy(segment_len: int) -> float:
        cfg = model_cfg.model_copy(update={"segment_len": segment_len})
        return evaluate_batches(copying_model(cfg, copy_cfg), params, batches)["accuracy"]

    return accuracy


def save_copying(path: Union[str, Path], result: TrainResult, model_cfg: ModelConfig, copy_cfg: CopyingConfig,
                 train_cfg: TrainConfig) -> Path:
    meta = {
        "task": "copying",
        "model": model_cfg.model_dump(),
        "copying": copy_cfg.model_dump(),
        "train": train_cfg.model_dump(),
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
    }
    return save_checkpoint(path, result.best_params, meta)


def load_task_checkpoint(path: Union[str, Path], task: str) -> Tuple[Params, Dict[str, object]]:
    params, meta = load_checkpoint(path)
    if meta.get("task") != task:
        raise ConfigError(f"{path} is a '{meta.get('task')}' checkpoint, expected '{task}'")
    return params, meta


def prepare_forecast(path: Union[str, Path], fcfg: ForecastConfig) -> ForecastWindows:
    """Load the CSV, optionally inject noise at ``fcfg.snr_db`` and cut the windows."""
    dataset = load_csv_dataset(path, has_timestamp=fcfg.has_timestamp)
    if fcfg.snr_db is not None:
        noisy = add_noise_snr(dataset.values, fcfg.snr_db, fcfg.noise_seed)
        dataset = ForecastDataset(values=noisy, columns=dataset.columns, train_end=dataset.train_end,
                                  val_end=dataset.val_end, stats=compute_stats(noisy[:dataset.train_end],
                                                                               dataset.columns))
    return ForecastWindows(dataset, fcfg.lookback, fcfg.horizon)


def forecast_model(model_cfg: ModelConfig, windows: ForecastWindows, dtype="float64") -> ForecastModel:
    return ForecastModel(model_cfg, windows.dataset.n_channels, windows.lookback, windows.horizon,
                         dtype=np.dtype(dtype))


def train_forecast(windows: ForecastWindows, model_cfg: ModelConfig, train_cfg: TrainConfig,
                   on_epoch: EpochCallback = None) -> TrainResult:
    logger.info(f"Training forecast model: lookback {windows.lookback}, horizon {windows.horizon}, "
                f"S={model_cfg.segment_len}, {train_cfg.steps} steps")
    return train_loop(forecast_model(model_cfg, windows, train_cfg.dtype), windows, train_cfg, on_epoch=on_epoch)


def eval_forecast(params: Params, windows: ForecastWindows, model_cfg: ModelConfig, split: str = "test",
                  batch_size: int = 64) -> pd.DataFrame:
    """
    MSE and MAE of the model and of the persistence baseline on one split.

    ``mse``/``mae`` are in the original units, ``mse_norm``/``mae_norm`` in
    normalised units.
    """
    model = forecast_model(model_cfg, windows)
    stats = windows.dataset.stats
    inputs, targets = windows.windows[split]
    preds = np.concatenate([model.predict(params, b["inputs"]) for b in windows.batches(split, batch_size)])
    baseline = persistence_forecast(inputs, windows.horizon)
    rows = []
    for name, pred in (("koss", preds), ("persistence", baseline)):
        rows.append({
            "split": split,
            "model": name,
            "mse": mse(denormalize(pred, stats), denormalize(targets, stats)),
            "mae": mae(denormalize(pred, stats), denormalize(targets, stats)),
            "mse_norm": mse(pred, targets),
            "mae_norm": mae(pred, targets),
        })
    frame = pd.DataFrame(rows)
    logger.info(f"forecast eval ({split}): koss mse {rows[0]['mse']:.5f}, persistence mse {rows[1]['mse']:.5f}")
    return frame


def save_forecast(path: Union[str, Path], result: TrainResult, model_cfg: ModelConfig, fcfg: ForecastConfig,
                  train_cfg: TrainConfig, windows: ForecastWindows) -> Path:
    meta = {
        "task": "forecast",
        "model": model_cfg.model_dump(),
        "forecast": fcfg.model_dump(),
        "train": train_cfg.model_dump(),
        "columns": windows.dataset.columns,
        "best_epoch": result.best_epoch,
        "best_val_loss": result.best_val_loss,
    }
    return save_checkpoint(path, result.best_params, meta)
