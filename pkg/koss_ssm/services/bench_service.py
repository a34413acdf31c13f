"""
Throughput benchmarks for the segment-wise scan and the KOSS layer.
"""
import time
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from koss_ssm.core.layer import KossParams, layer_forward
from koss_ssm.core.scan import ScanElement, SegmentPlan, segment_scan, sequential_scan
from koss_ssm.errors import ConfigError
from koss_ssm.utils.logging import logger
from koss_ssm.utils.rng import STREAM_BENCH, make_rng


def random_elements(length: int, n_state: int, rng: np.random.Generator, radius: float = 0.9) -> ScanElement:
    """Random contractive elements (spectral norm ``radius``) that ignore the boundary state."""
    m = rng.normal(size=(length, n_state, n_state))
    m *= radius / np.linalg.norm(m, ord=2, axis=(-2, -1))[:, None, None]
    return ScanElement(m, rng.normal(size=(length, n_state)))


def _median_ms(fn: Callable[[], object], trials: int) -> float:
    times = []
    for _ in range(trials):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return 1e3 * float(np.median(times))


def _check_segments(segments: Sequence[int], length: int):
    if not segments:
        raise ConfigError("at least one segment length is required")
    bad = [s for s in segments if not 1 <= s <= length]
    if bad:
        raise ConfigError(f"segment lengths must lie in [1, {length}], got {bad}")


def bench_scan(length: int = 4096, segments: Sequence[int] = (1, 16, 256, 4096), n_state: int = 8,
               trials: int = 5, threads: int = 1, seed: int = 0) -> pd.DataFrame:
    """
    Median wall time of segment_scan for every S against the sequential fold.

    The elements do not depend on the boundary state, so every S must reproduce
    the sequential states; ``max_abs_diff`` records the largest deviation.

    Returns:
        One row per S: S, median_ms, tokens_per_s, speedup_vs_sequential, max_abs_diff
    """
    if trials < 3:
        raise ConfigError(f"trials must be >= 3, got {trials}")
    _check_segments(segments, length)
    elems = random_elements(length, n_state, make_rng(seed, STREAM_BENCH))
    h0 = np.zeros(n_state)
    reference = sequential_scan(elems, h0)
    seq_ms = _median_ms(lambda: sequential_scan(elems, h0), trials)
    logger.info(f"bench scan: L={length} N={n_state} sequential {seq_ms:.2f} ms")

    def factory(start, stop, _h):
        return elems[start:stop]

    rows = []
    for s in segments:
        plan = SegmentPlan(total_len=length, segment_len=s)
        states = segment_scan(factory, plan, h0, threads=threads).states
        ms = _median_ms(lambda: segment_scan(factory, plan, h0, threads=threads), trials)
        rows.append({
            "S": s,
            "median_ms": ms,
            "tokens_per_s": length / (ms / 1e3),
            "speedup_vs_sequential": seq_ms / ms,
            "max_abs_diff": float(np.max(np.abs(states - reference))),
        })
        logger.info(f"bench scan: S={s} {ms:.2f} ms ({seq_ms / ms:.2f}x)")
    return pd.DataFrame(rows)


def bench_layer(params: KossParams, x: np.ndarray, segments: Sequence[int], trials: int = 5, threads: int = 1,
                accuracy: Optional[Callable[[int], float]] = None) -> pd.DataFrame:
    """
    Median wall time of one numpy KOSS layer pass over ``x`` (B, L, D) for every S.

    ``accuracy(S)``, when given, adds the task accuracy obtained with segment length S.
    """
    if trials < 3:
        raise ConfigError(f"trials must be >= 3, got {trials}")
    x = np.asarray(x, dtype=float)
    batch, length, _ = x.shape
    _check_segments(segments, length)
    rows = []
    for s in segments:
        ms = _median_ms(lambda: layer_forward(x, params, s, threads=threads), trials)
        row: Dict[str, float] = {"S": s, "median_ms": ms, "tokens_per_s": batch * length / (ms / 1e3)}
        if accuracy is not None:
            row["accuracy"] = accuracy(s)
        logger.info(f"bench layer: S={s} {ms:.2f} ms")
        rows.append(row)
    return pd.DataFrame(rows)
