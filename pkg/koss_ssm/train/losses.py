"""
Losses on the tape and their plain numpy metric counterparts.
"""
import numpy as np

from koss_ssm.errors import ConfigError
from koss_ssm.train.autodiff import Var, abs_, cross_entropy, mean, sub

__all__ = ["cross_entropy", "cross_entropy_value", "mse", "mae", "mse_loss", "mae_loss"]


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ConfigError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    return pred, target


def mse(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    return float(np.mean((pred - target) ** 2))


def mae(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def cross_entropy_value(logits, targets) -> float:
    z = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    shifted = z - z.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return float(-np.take_along_axis(log_probs, targets[..., None], axis=-1).mean())


def mse_loss(pred: Var, target) -> Var:
    if pred.shape != np.shape(target):
        raise ConfigError(f"shape mismatch: pred {pred.shape} vs target {np.shape(target)}")
    diff = sub(pred, target)
    return mean(diff * diff)


def mae_loss(pred: Var, target) -> Var:
    if pred.shape != np.shape(target):
        raise ConfigError(f"shape mismatch: pred {pred.shape} vs target {np.shape(target)}")
    return mean(abs_(sub(pred, target)))
