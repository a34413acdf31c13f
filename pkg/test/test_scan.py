"""
Associative combine, the Blelloch inclusive scan and segment-wise execution.
"""
import numpy as np
import pytest

from koss_ssm.core.scan import (SEQUENTIAL_CUTOFF, ScanElement, SegmentPlan, WorkPool, apply_element, combine,
                                inclusive_scan, segment_scan, sequential_scan)
from koss_ssm.errors import ConfigError
from koss_ssm.services.bench_service import random_elements


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(1.0, np.max(np.abs(b)))


def random_element(rng, n, shape=()):
    return ScanElement(rng.normal(size=shape + (n, n)) / np.sqrt(n), rng.normal(size=shape + (n,)))


@pytest.mark.parametrize("n", [1, 3, 8])
def test_combine_is_associative(n):
    rng = np.random.default_rng(n)
    for _ in range(20):
        e1, e2, e3 = (random_element(rng, n) for _ in range(3))
        left = combine(combine(e1, e2), e3)
        right = combine(e1, combine(e2, e3))
        assert rel_err(left.m, right.m) <= 1e-12
        assert rel_err(left.v, right.v) <= 1e-12


def test_combine_applies_first_element_first():
    rng = np.random.default_rng(0)
    e1, e2 = random_element(rng, 4), random_element(rng, 4)
    h = rng.normal(size=4)
    np.testing.assert_allclose(apply_element(combine(e1, e2), h), apply_element(e2, apply_element(e1, h)))


def test_identity_element_is_neutral():
    rng = np.random.default_rng(1)
    e = random_element(rng, 3)
    ident = ScanElement.identity((), 3)
    np.testing.assert_allclose(combine(ident, e).m, e.m)
    np.testing.assert_allclose(combine(e, ident).v, e.v)


def test_element_shapes_validated():
    with pytest.raises(ConfigError):
        ScanElement(np.zeros((4, 3, 3)), np.zeros((4, 2)))


@pytest.mark.parametrize("length", [1, 5, SEQUENTIAL_CUTOFF, SEQUENTIAL_CUTOFF + 1, 100, 257])
def test_inclusive_scan_matches_sequential(length):
    rng = np.random.default_rng(length)
    elems = random_elements(length, 4, rng)
    h0 = rng.normal(size=4)
    assert rel_err(inclusive_scan(elems, h0), sequential_scan(elems, h0)) <= 1e-11


def test_inclusive_scan_with_batch_axes():
    rng = np.random.default_rng(7)
    m = rng.normal(size=(70, 2, 3, 4, 4)) * 0.15
    v = rng.normal(size=(70, 2, 3, 4))
    elems = ScanElement(m, v)
    h0 = rng.normal(size=(2, 3, 4))
    out = inclusive_scan(elems, h0)
    assert out.shape == (70, 2, 3, 4)
    assert rel_err(out, sequential_scan(elems, h0)) <= 1e-11


def test_inclusive_scan_is_thread_count_independent():
    rng = np.random.default_rng(8)
    elems = random_elements(1024, 8, rng)
    h0 = rng.normal(size=8)
    single = inclusive_scan(elems, h0)
    with WorkPool(4) as pool:
        threaded = inclusive_scan(elems, h0, pool=pool)
    np.testing.assert_array_equal(single, threaded)


def test_inclusive_scan_rejects_empty():
    with pytest.raises(ConfigError):
        inclusive_scan(ScanElement(np.zeros((0, 2, 2)), np.zeros((0, 2))), np.zeros(2))


def test_work_pool_needs_a_worker():
    with pytest.raises(ConfigError):
        WorkPool(0)


def test_segment_plan():
    plan = SegmentPlan(total_len=10, segment_len=4)
    assert plan.num_segments == 3
    assert list(plan.bounds()) == [(0, 4), (4, 8), (8, 10)]
    with pytest.raises(ConfigError):
        SegmentPlan(total_len=10, segment_len=11)
    with pytest.raises(ConfigError):
        SegmentPlan(total_len=0, segment_len=1)


@pytest.mark.parametrize("seed", range(20))
def test_segment_scan_matches_sequential(seed):
    length, n = 1024, 8
    rng = np.random.default_rng(seed)
    elems = random_elements(length, n, rng)
    h0 = rng.normal(size=n)
    reference = sequential_scan(elems, h0)
    for s in (1, 7, 16, 32, length):
        result = segment_scan(lambda lo, hi, _h: elems[lo:hi], SegmentPlan(length, s), h0)
        assert rel_err(result.states, reference) <= 1e-11
        assert len(result.boundaries) == -(-length // s)
        np.testing.assert_array_equal(result.final_state, result.states[-1])


def test_segment_scan_hands_boundary_state_to_factory():
    seen = []

    def factory(lo, hi, h):
        seen.append(h.copy())
        return ScanElement(np.broadcast_to(np.eye(1), (hi - lo, 1, 1)).copy(), np.ones((hi - lo, 1)))

    result = segment_scan(factory, SegmentPlan(10, 4), np.zeros(1))
    # h_t = h_{t-1} + 1
    np.testing.assert_allclose(result.states[:, 0], np.arange(1, 11))
    np.testing.assert_allclose([h[0] for h in seen], [0.0, 4.0, 8.0])


def test_segment_scan_streaming_keeps_only_boundaries():
    rng = np.random.default_rng(3)
    elems = random_elements(50, 3, rng)
    chunks = []
    result = segment_scan(lambda lo, hi, _h: elems[lo:hi], SegmentPlan(50, 16), np.zeros(3),
                          on_segment=lambda lo, hi, states: chunks.append((lo, hi, states.shape)))
    assert result.states is None
    assert len(result.boundaries) == 4
    assert chunks == [(0, 16, (16, 3)), (16, 32, (16, 3)), (32, 48, (16, 3)), (48, 50, (2, 3))]


def test_segment_scan_threads_give_identical_states():
    rng = np.random.default_rng(4)
    elems = random_elements(512, 4, rng)
    plan = SegmentPlan(512, 256)
    one = segment_scan(lambda lo, hi, _h: elems[lo:hi], plan, np.zeros(4), threads=1)
    four = segment_scan(lambda lo, hi, _h: elems[lo:hi], plan, np.zeros(4), threads=4)
    np.testing.assert_array_equal(one.states, four.states)


def test_segment_scan_checks_factory_length():
    elems = random_elements(8, 2, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        segment_scan(lambda lo, hi, _h: elems[lo:lo + 1], SegmentPlan(8, 4), np.zeros(2))
