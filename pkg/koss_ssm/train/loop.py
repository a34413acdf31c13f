"""
Training loop: Adam steps on tape gradients, periodic validation and best-checkpoint tracking.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence

import numpy as np

from koss_ssm.errors import NonFiniteError
from koss_ssm.models.schemas import HistoryRow, TrainConfig
from koss_ssm.train.autodiff import Tape, backward
from koss_ssm.train.model import Batch, Model, Params, bind, evaluate_batches
from koss_ssm.train.optim import AdamState, adam_step
from koss_ssm.utils.logging import logger
from koss_ssm.utils.rng import STREAM_BATCHES, STREAM_PARAMS, make_rng


class Dataset(Protocol):
    def train_batch(self, rng: np.random.Generator, batch_size: int) -> Batch: ...

    def val_batches(self, batch_size: int) -> Sequence[Batch]: ...


@dataclass
class TrainResult:
    best_params: Params
    final_params: Params
    history: List[HistoryRow] = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = math.inf


def _cast(params: Params, dtype) -> Params:
    return {name: np.asarray(value, dtype=dtype) for name, value in params.items()}


def train_loop(model: Model, dataset: Dataset, config: TrainConfig,
               init: Optional[Params] = None,
               on_epoch: Optional[Callable[[HistoryRow], None]] = None) -> TrainResult:
    """
    Train ``model`` on ``dataset`` for ``config.steps`` Adam steps.

    One "epoch" is ``config.eval_every`` steps; after each the validation set is
    evaluated and the parameters with the lowest validation loss are kept.

    Raises:
        NonFiniteError: a training or validation loss was NaN or Inf (step reported)
    """
    dtype = np.dtype(config.dtype)
    params = _cast(init if init is not None else model.init_params(make_rng(config.seed, STREAM_PARAMS)), dtype)
    batch_rng = make_rng(config.seed, STREAM_BATCHES)
    state = AdamState(lr=config.lr)
    val = list(dataset.val_batches(config.batch_size))[: config.val_batches]

    result = TrainResult(best_params=params, final_params=params)
    running: List[float] = []

    def evaluate(epoch: int, step: int):
        metrics = evaluate_batches(model, params, val)
        val_loss = metrics.pop("loss")
        if not math.isfinite(val_loss):
            raise NonFiniteError("validation loss is not finite", where=f"step {step}")
        train_loss = float(np.mean(running)) if running else val_loss
        row = HistoryRow(epoch=epoch, step=step, train_loss=train_loss, val_loss=val_loss, metrics=metrics)
        result.history.append(row)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch
            result.best_params = {k: v.copy() for k, v in params.items()}
        logger.info(f"epoch {epoch} step {step}: train {train_loss:.5f} val {val_loss:.5f} {metrics}")
        if on_epoch is not None:
            on_epoch(row)
        running.clear()

    if config.steps == 0:
        evaluate(0, 0)
    epoch = 0
    for step in range(1, config.steps + 1):
        batch = dataset.train_batch(batch_rng, config.batch_size)
        tape = Tape(dtype)
        loss = model.loss(tape, bind(tape, params), batch)
        loss_value = float(loss.value)
        if not math.isfinite(loss_value):
            raise NonFiniteError("training loss is not finite", where=f"step {step}")
        grads = backward(tape, loss)
        params = adam_step(params, grads, state)
        running.append(loss_value)
        logger.debug(f"step {step}: loss {loss_value:.6f}")
        if step % config.eval_every == 0 or step == config.steps:
            epoch += 1
            evaluate(epoch, step)

    result.final_params = params
    return result


def history_table(history: Sequence[HistoryRow]) -> List[Dict[str, float]]:
    """Flat rows (epoch, step, train_loss, val_loss, metric columns) for CSV output."""
    rows = []
    for row in history:
        flat = {"epoch": row.epoch, "step": row.step, "train_loss": row.train_loss, "val_loss": row.val_loss}
        flat.update(row.metrics)
        rows.append(flat)
    return rows
