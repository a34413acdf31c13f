"""
Segment-wise scan for matrix-affine recurrences h_t = M_t h_{t-1} + v_t.

Inside a segment the elements are combined with a work-efficient
(Blelloch up-sweep/down-sweep) tree; across segments the final state is handed
on sequentially, and the next segment's elements may depend on it.

Elements carry a leading time axis followed by arbitrary batch axes:
``m`` is (T, ..., N, N) and ``v`` is (T, ..., N).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np

from koss_ssm.errors import ConfigError
from koss_ssm.utils.logging import logger

SEQUENTIAL_CUTOFF = 32
_MIN_CHUNK = 64


def _matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.matmul(m, v[..., None])[..., 0]


class WorkPool:
    """Thread pool that remembers its size; numpy matmul releases the GIL."""

    def __init__(self, workers: int):
        if workers < 1:
            raise ConfigError(f"thread count must be >= 1, got {workers}")
        self.workers = workers
        self._executor = ThreadPoolExecutor(max_workers=workers)

    def map(self, fn, items):
        return self._executor.map(fn, items)

    def shutdown(self):
        self._executor.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


@dataclass
class ScanElement:
    m: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.m.shape[-1] != self.m.shape[-2] or self.m.shape[:-1] != self.v.shape:
            raise ConfigError(f"ScanElement shapes disagree: m {self.m.shape}, v {self.v.shape}")

    def __len__(self) -> int:
        return self.m.shape[0]

    @property
    def n_state(self) -> int:
        return self.v.shape[-1]

    def __getitem__(self, idx) -> "ScanElement":
        return ScanElement(self.m[idx], self.v[idx])

    @classmethod
    def identity(cls, shape: Tuple[int, ...], n: int, dtype=float) -> "ScanElement":
        m = np.broadcast_to(np.eye(n, dtype=dtype), shape + (n, n)).copy()
        return cls(m, np.zeros(shape + (n,), dtype=dtype))


def combine(e1: ScanElement, e2: ScanElement) -> ScanElement:
    """Apply ``e1`` then ``e2``: (m2 m1, m2 v1 + v2)."""
    if e1.n_state != e2.n_state:
        raise ConfigError("combine needs elements of equal state size")
    return ScanElement(np.matmul(e2.m, e1.m), _matvec(e2.m, e1.v) + e2.v)


def apply_element(e: ScanElement, h: np.ndarray) -> np.ndarray:
    return _matvec(e.m, h) + e.v


def sequential_scan(elems: ScanElement, h0: np.ndarray) -> np.ndarray:
    """Reference fold, one step at a time."""
    states = np.empty(elems.v.shape, dtype=np.result_type(elems.v, h0))
    h = np.asarray(h0)
    for t in range(len(elems)):
        h = _matvec(elems.m[t], h) + elems.v[t]
        states[t] = h
    return states


def _combine_at(a_m, a_v, earlier, later, pool: Optional["WorkPool"]):
    """a[later] <- combine(a[earlier], a[later]) for all index pairs of one tree level."""

    def work(lo, hi):
        e, l_ = earlier[lo:hi], later[lo:hi]
        m_l = a_m[l_]
        new_v = _matvec(m_l, a_v[e]) + a_v[l_]
        new_m = np.matmul(m_l, a_m[e])
        a_m[l_] = new_m
        a_v[l_] = new_v

    _run_chunked(work, len(later), pool)


def _run_chunked(work, count: int, pool: Optional["WorkPool"]):
    if pool is None or count < 2 * _MIN_CHUNK:
        work(0, count)
        return
    n_chunks = min(pool.workers, count // _MIN_CHUNK)
    edges = np.linspace(0, count, n_chunks + 1).astype(int)
    # chunks touch disjoint indices; each pair is computed identically however it is split
    list(pool.map(lambda b: work(edges[b], edges[b + 1]), range(n_chunks)))


def _blelloch(elems: ScanElement, pool: Optional["WorkPool"]) -> ScanElement:
    """Inclusive prefix compositions of every element."""
    t = len(elems)
    size = 1 << (t - 1).bit_length()
    batch = elems.v.shape[1:-1]
    n = elems.n_state
    pad = ScanElement.identity((size - t,) + batch, n, dtype=elems.m.dtype)
    a_m = np.concatenate([elems.m, pad.m], axis=0)
    a_v = np.concatenate([elems.v, pad.v], axis=0)

    step = 2
    while step <= size:
        right = np.arange(step - 1, size, step)
        _combine_at(a_m, a_v, right - step // 2, right, pool)
        step *= 2

    root = ScanElement.identity(batch, n, dtype=elems.m.dtype)
    a_m[size - 1] = root.m
    a_v[size - 1] = root.v

    step = size
    while step >= 2:
        right = np.arange(step - 1, size, step)
        left = right - step // 2
        left_m, left_v = a_m[left].copy(), a_v[left].copy()
        a_m[left] = a_m[right]
        a_v[left] = a_v[right]

        def work(lo, hi, right=right, left_m=left_m, left_v=left_v):
            r = right[lo:hi]
            # prefix before the subtree, then the left subtree's total
            new_v = _matvec(left_m[lo:hi], a_v[r]) + left_v[lo:hi]
            a_m[r] = np.matmul(left_m[lo:hi], a_m[r])
            a_v[r] = new_v

        _run_chunked(work, len(right), pool)
        step //= 2

    exclusive = ScanElement(a_m[:t], a_v[:t])
    return combine(exclusive, elems)


def inclusive_scan(elems: ScanElement, h0: np.ndarray,
                   pool: Optional["WorkPool"] = None) -> np.ndarray:
    """
    All states of the recurrence seeded by ``h0``.

    Args:
        elems: elements with a leading time axis
        h0: initial state, shape (..., N)
        pool: optional executor for the tree levels; results do not depend on it

    Returns:
        Array of shape (T, ..., N) with states[t] = M_t ... M_0 h0 + offsets
    """
    if len(elems) == 0:
        raise ConfigError("inclusive_scan needs at least one element")
    h0 = np.asarray(h0)
    if len(elems) <= SEQUENTIAL_CUTOFF:
        return sequential_scan(elems, h0)
    prefix = _blelloch(elems, pool)
    return _matvec(prefix.m, np.broadcast_to(h0, prefix.v.shape)) + prefix.v


@dataclass(frozen=True)
class SegmentPlan:
    total_len: int
    segment_len: int

    def __post_init__(self):
        if self.total_len < 1:
            raise ConfigError(f"total_len must be >= 1, got {self.total_len}")
        if not 1 <= self.segment_len <= self.total_len:
            raise ConfigError(f"segment_len must lie in [1, {self.total_len}], got {self.segment_len}")

    @property
    def num_segments(self) -> int:
        return -(-self.total_len // self.segment_len)

    def bounds(self) -> Iterator[Tuple[int, int]]:
        for start in range(0, self.total_len, self.segment_len):
            yield start, min(start + self.segment_len, self.total_len)


ElementFactory = Callable[[int, int, np.ndarray], ScanElement]
SegmentCallback = Callable[[int, int, np.ndarray], None]


@dataclass
class SegmentScanResult:
    states: Optional[np.ndarray]
    boundaries: List[np.ndarray]

    @property
    def final_state(self) -> np.ndarray:
        return self.boundaries[-1]


def segment_scan(factory: ElementFactory, plan: SegmentPlan, h0: np.ndarray, threads: int = 1,
                 on_segment: Optional[SegmentCallback] = None) -> SegmentScanResult:
    """
    Run the recurrence segment by segment.

    ``factory(start, stop, h_boundary)`` materialises the elements of positions
    [start, stop) given the state entering the segment. Only the boundary
    states are kept; when ``on_segment`` is given the per-segment states are
    streamed to it instead of being stored.
    """
    h = np.asarray(h0)
    boundaries: List[np.ndarray] = []
    chunks: List[np.ndarray] = []
    pool = WorkPool(threads) if threads > 1 else None
    try:
        for start, stop in plan.bounds():
            elems = factory(start, stop, h)
            if len(elems) != stop - start:
                raise ConfigError(f"factory returned {len(elems)} elements for segment [{start}, {stop})")
            states = inclusive_scan(elems, h, pool=pool)
            h = states[-1]
            boundaries.append(h)
            if on_segment is not None:
                on_segment(start, stop, states)
            else:
                chunks.append(states)
    finally:
        if pool is not None:
            pool.shutdown()
    logger.debug(f"segment_scan: L={plan.total_len} S={plan.segment_len} boundaries={len(boundaries)}")
    states_all = np.concatenate(chunks, axis=0) if chunks else None
    return SegmentScanResult(states=states_all, boundaries=boundaries)
