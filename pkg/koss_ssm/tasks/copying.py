"""
Context-aware selective copying.

A sequence is a body of noise tokens holding ``n_data_tokens`` data tokens and
``floor(r * n_data_tokens)`` distractors, followed by a tail of recall markers.
A distractor is a data-vocabulary token right after a distractor-context
marker, so whether a token must be recalled depends on what came before it.
The targets are the data tokens in order of appearance.

Token ids: 0 noise, 1 distractor-context marker, 2 recall marker, 3.. data.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
import pandas as pd

from koss_ssm.errors import ConfigError
from koss_ssm.models.schemas import CopyingConfig
from koss_ssm.utils.logging import logger
from koss_ssm.utils.rng import STREAM_COPYING, STREAM_VALIDATION, make_rng

NOISE = 0
DISTRACTOR_MARK = 1
RECALL_MARK = 2
FIRST_DATA = 3


@dataclass
class CopyingSample:
    tokens: np.ndarray   # (seq_len,)
    targets: np.ndarray  # (n_data_tokens,)
    mask: np.ndarray     # (seq_len,) True at the recall positions


def _generate(cfg: CopyingConfig, rng: np.random.Generator) -> CopyingSample:
    n_data, n_dist = cfg.n_data_tokens, cfg.n_distractors
    body = cfg.body_len
    # unit lengths: data token 1, distractor (marker, token) 2
    lengths = np.array([1] * n_data + [2] * n_dist)
    order = rng.permutation(len(lengths))
    lengths = lengths[order]
    free = body - int(lengths.sum())
    starts = np.sort(rng.choice(free + len(lengths), size=len(lengths), replace=False))
    starts = starts + np.concatenate([[0], np.cumsum(lengths - 1)[:-1]]).astype(int)

    tokens = np.full(cfg.seq_len, NOISE, dtype=np.int64)
    values = rng.integers(FIRST_DATA, cfg.vocab_size, size=len(lengths))
    targets = []
    for start, length, value in zip(starts, lengths, values):
        if length == 1:
            tokens[start] = value
            targets.append(value)
        else:
            tokens[start] = DISTRACTOR_MARK
            tokens[start + 1] = value
    tokens[body:] = RECALL_MARK
    mask = np.zeros(cfg.seq_len, dtype=bool)
    mask[body:] = True
    return CopyingSample(tokens=tokens, targets=np.array(targets, dtype=np.int64), mask=mask)


def gen_selective_copying(cfg: CopyingConfig, rng: Optional[np.random.Generator] = None) -> CopyingSample:
    """One sequence; deterministic in ``cfg.seed`` unless an explicit generator is passed."""
    return _generate(cfg, rng if rng is not None else make_rng(cfg.seed, STREAM_COPYING))


def gen_copying_batch(cfg: CopyingConfig, batch_size: int, stream: int = STREAM_COPYING,
                      offset: int = 0) -> dict:
    """Stack ``batch_size`` sequences, sequence i drawn from Philox stream (stream, offset + i)."""
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    samples = [_generate(cfg, make_rng(cfg.seed, (stream << 32) | (offset + i))) for i in range(batch_size)]
    return _stack(samples)


def _stack(samples: List[CopyingSample]) -> dict:
    return {
        "tokens": np.stack([s.tokens for s in samples]),
        "targets": np.stack([s.targets for s in samples]),
        "mask": np.stack([s.mask for s in samples]),
    }


def decode_copying(tokens, n_data_tokens: int) -> np.ndarray:
    """Recover the targets from a token sequence by tracking the distractor marker."""
    out = []
    after_marker = False
    for tok in np.asarray(tokens):
        if tok == RECALL_MARK:
            break
        if tok == DISTRACTOR_MARK:
            after_marker = True
            continue
        if tok >= FIRST_DATA and not after_marker:
            out.append(int(tok))
        after_marker = False
    if len(out) != n_data_tokens:
        raise ConfigError(f"decoded {len(out)} data tokens, expected {n_data_tokens}")
    return np.array(out, dtype=np.int64)


def copying_accuracy(logits, targets) -> float:
    """Fraction of target positions where argmax(logits) equals the target."""
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ConfigError(f"logits {logits.shape} do not match targets {targets.shape}")
    if targets.size == 0:
        return 0.0
    return float(np.mean(np.argmax(logits, axis=-1) == targets))


class CopyingDataset:
    """Fresh training sequences from the loop's generator, fixed validation batches."""

    def __init__(self, cfg: CopyingConfig):
        self.cfg = cfg

    def train_batch(self, rng: np.random.Generator, batch_size: int) -> dict:
        return _stack([_generate(self.cfg, rng) for _ in range(batch_size)])

    def val_batches(self, batch_size: int) -> List[dict]:
        return [gen_copying_batch(self.cfg, batch_size, stream=STREAM_VALIDATION, offset=i * batch_size)
                for i in range(4)]


def export_copying_jsonl(path: Union[str, Path], cfg: CopyingConfig, n_sequences: int) -> Path:
    """Write generated sequences as JSON lines: index, tokens, targets, and the generator settings."""
    batch = gen_copying_batch(cfg, n_sequences)
    frame = pd.DataFrame({
        "index": np.arange(n_sequences),
        "tokens": [row.tolist() for row in batch["tokens"]],
        "targets": [row.tolist() for row in batch["targets"]],
        "seq_len": cfg.seq_len,
        "vocab_size": cfg.vocab_size,
        "interference_ratio": cfg.interference_ratio,
        "seed": cfg.seed,
    })
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_json(path, orient="records", lines=True)
    logger.info(f"Wrote {n_sequences} copying sequences to {path}")
    return path
