"""
Spectral Differentiation Unit.

Estimates dx/dt of a uniformly sampled sequence by multiplying its spectrum
with j*omega (optionally damped by a mask chi(omega)) and transforming back,
keeping the real part. The operator is linear in x; its transpose is exposed
for backpropagation. A central-difference comparator and magnitude spectra
support the frequency-response experiment.
"""
from functools import lru_cache

import numpy as np

from koss_ssm.errors import ConfigError
from koss_ssm.models.schemas import SpectralConfig
from koss_ssm.numerics.fft import fft, ifft


def frequency_vector(cfg: SpectralConfig) -> np.ndarray:
    """Angular frequency of every DFT bin, negative frequencies from n/2 on."""
    n, dt = cfg.n, cfg.dt
    k = np.arange(n)
    k = np.where(k < n / 2, k, k - n)
    return 2.0 * np.pi * k / (n * dt)


def damping_mask(omega: np.ndarray, cfg: SpectralConfig) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if cfg.mask_kind == "none":
        return np.ones_like(omega)
    if cfg.mask_kind == "soft":
        return np.exp(-np.abs(omega) / cfg.omega_cut)
    return (np.abs(omega) <= cfg.omega_cut).astype(float)


@lru_cache(maxsize=128)
def _multiplier(cfg: SpectralConfig) -> np.ndarray:
    omega = frequency_vector(cfg)
    mult = 1j * omega * damping_mask(omega, cfg)
    mult.setflags(write=False)
    return mult


def _broadcast_along(vec: np.ndarray, ndim: int, axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[axis] = vec.shape[0]
    return vec.reshape(shape)


def _check_length(x: np.ndarray, cfg: SpectralConfig, axis: int):
    if x.shape[axis] != cfg.n:
        raise ConfigError(f"sequence length {x.shape[axis]} does not match SpectralConfig.n={cfg.n}")


def _trend_weights(cfg: SpectralConfig):
    t = np.arange(cfg.n) * cfg.dt
    tc = t - t.mean()
    return tc, tc / np.dot(tc, tc)


def _detrend(x: np.ndarray, cfg: SpectralConfig, axis: int):
    tc, w = _trend_weights(cfg)
    slope = np.tensordot(x, w, axes=([axis], [0]))
    slope_b = np.expand_dims(slope, axis)
    resid = x - x.mean(axis=axis, keepdims=True) - slope_b * _broadcast_along(tc, x.ndim, axis)
    return resid, slope_b


def _apply(x: np.ndarray, cfg: SpectralConfig, axis: int) -> np.ndarray:
    mult = _broadcast_along(_multiplier(cfg), x.ndim, axis)
    return np.real(ifft(mult * fft(x, axis=axis), axis=axis))


def _apply_transpose(g: np.ndarray, cfg: SpectralConfig, axis: int) -> np.ndarray:
    mult = _broadcast_along(_multiplier(cfg), g.ndim, axis)
    return np.real(fft(mult * ifft(g, axis=axis), axis=axis))


def spectral_derivative(x, cfg: SpectralConfig, axis: int = -1) -> np.ndarray:
    """
    Re(IDFT(j omega chi(omega) DFT(x))) along ``axis``.

    With ``cfg.detrend`` the least-squares line is removed first and its
    slope added back, which suppresses the edge ringing of non-periodic inputs.
    """
    x = np.asarray(x, dtype=float)
    _check_length(x, cfg, axis)
    if not cfg.detrend:
        return _apply(x, cfg, axis)
    resid, slope = _detrend(x, cfg, axis)
    return _apply(resid, cfg, axis) + slope


def spectral_derivative_adjoint(g, cfg: SpectralConfig, axis: int = -1) -> np.ndarray:
    """Transpose of :func:`spectral_derivative` applied to ``g``."""
    g = np.asarray(g, dtype=float)
    _check_length(g, cfg, axis)
    if not cfg.detrend:
        return _apply_transpose(g, cfg, axis)
    # D_detrend = D P + w 1^T with P the (symmetric) detrending projector
    _, w = _trend_weights(cfg)
    back = _apply_transpose(g, cfg, axis)
    proj, _ = _detrend(back, cfg, axis)
    total = g.sum(axis=axis, keepdims=True)
    return proj + total * _broadcast_along(w, g.ndim, axis)


def central_difference(x, dt: float, axis: int = -1) -> np.ndarray:
    """Central differences inside, first-order one-sided differences at the ends."""
    x = np.asarray(x, dtype=float)
    if x.shape[axis] < 3:
        raise ConfigError("central_difference needs at least 3 samples")
    return np.gradient(x, dt, axis=axis, edge_order=1)


def magnitude_spectrum(x, axis: int = -1) -> np.ndarray:
    return np.abs(fft(np.asarray(x, dtype=float), axis=axis))


def high_band_energy(spectrum: np.ndarray, omega: np.ndarray, fraction: float = 0.25) -> float:
    """Summed magnitude over the bins whose |omega| lies in the top ``fraction`` of the band."""
    band = np.abs(omega)
    threshold = (1.0 - fraction) * band.max()
    return float(np.sum(np.asarray(spectrum)[band >= threshold]))
