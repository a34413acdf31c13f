"""
Counter-based random streams named by (seed, stream id).
"""
import numpy as np

# Fixed stream ids, one per use
STREAM_PARAMS = 0
STREAM_BATCHES = 1
STREAM_NOISE = 2
STREAM_COPYING = 3
STREAM_VALIDATION = 4
STREAM_BENCH = 5
STREAM_TEST = 6


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed on (seed, stream); identical keys give identical draws."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)]))
