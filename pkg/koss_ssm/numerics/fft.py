"""
Discrete Fourier transforms of any length.

Powers of two use an iterative radix-2 Cooley-Tukey transform; every other
length goes through Bluestein's chirp-z algorithm, which re-expresses the DFT
as a circular convolution of power-of-two length. Inputs are never zero-padded
from the caller's point of view, so bin k always means frequency k/N.
All transforms act on the last axis unless ``axis`` says otherwise and are
vectorised over the remaining axes.
"""
from functools import lru_cache

import numpy as np

from koss_ssm.errors import ConfigError


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@lru_cache(maxsize=64)
def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    rev.setflags(write=False)
    return rev


@lru_cache(maxsize=64)
def _twiddles(size: int) -> np.ndarray:
    tw = np.exp(-2j * np.pi * np.arange(size // 2) / size)
    tw.setflags(write=False)
    return tw


def _radix2(x: np.ndarray) -> np.ndarray:
    """Radix-2 decimation-in-time DFT along the last axis (length 2^k)."""
    lead = x.shape[:-1]
    n = x.shape[-1]
    a = x[..., _bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        a = a.reshape(*lead, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * _twiddles(size)
        a = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return a.reshape(*lead, n)


@lru_cache(maxsize=32)
def _bluestein_plan(n: int):
    m = 1 << (2 * n - 1).bit_length()
    k = np.arange(n)
    # k^2 mod 2n keeps the chirp argument small for long sequences
    chirp = np.exp(-1j * np.pi * ((k * k) % (2 * n)) / n)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    if n > 1:
        b[m - n + 1:] = np.conj(chirp[1:n])[::-1]
    b_hat = _radix2(b)
    chirp.setflags(write=False)
    b_hat.setflags(write=False)
    return m, chirp, b_hat


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m, chirp, b_hat = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * chirp
    conv = _inverse_pow2(_radix2(a) * b_hat)
    return conv[..., :n] * chirp


def _inverse_pow2(x: np.ndarray) -> np.ndarray:
    return np.conj(_radix2(np.conj(x))) / x.shape[-1]


def _transform(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.copy()
    if _is_power_of_two(n):
        return _radix2(x)
    return _bluestein(x)


def fft(x, axis: int = -1) -> np.ndarray:
    """X_k = sum_n x_n exp(-j 2 pi k n / N) along ``axis``."""
    x = np.asarray(x, dtype=complex)
    if x.shape[axis] < 1:
        raise ConfigError("fft of an empty axis")
    moved = np.moveaxis(x, axis, -1)
    return np.moveaxis(_transform(moved), -1, axis)


def ifft(x, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`fft` with the 1/N scaling."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[axis]
    return np.conj(fft(np.conj(x), axis=axis)) / n
