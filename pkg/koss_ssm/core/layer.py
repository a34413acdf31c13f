"""
The KOSS layer (numpy forward path).

Per channel d the layer carries an N-dimensional state with diagonal base
dynamics A = -exp(a_log[d]). At every position t:

    innov  = x_t - C_t h_ctx                 (h_ctx: state entering the segment)
    phi    = gain_scale * tanh(w2 silu(w1 innov + b1) + b2)
    K      = phi / (1 + |phi|^2 |C_t|^2 / gain_scale^2)
    A_K    = M (I + K C_t),  B_K = -M K,     M = A - K (C_t A)
    h_t    = Abar h_{t-1} + Bbar x_t + K dx_t
    y_t    = C_t h_t

with dx the spectral derivative of the input sequence and (Abar, Bbar) the
euler or matrix-exponential discretisation of (A_K, B_K) with step Delta_t.

C_t = x_t W_c is one row shared by all D channels of a position. The gain
bound keeps |K| |C_t| <= gain_scale / 2, so every eigenvalue of A_K lies within
(gain_scale / 2)^2 max|A| of an eigenvalue of A. The euler Abar stays in the
unit disc while that distance is below min|A| and Delta max|A| <= 1.
"""
import math
from dataclasses import dataclass, field
from typing import Dict, Literal, Optional, Tuple

import numpy as np

from koss_ssm.core.scan import ScanElement, SegmentPlan, segment_scan
from koss_ssm.core.sdu import spectral_derivative
from koss_ssm.errors import ConfigError, NonFiniteError, SingularMatrixError
from koss_ssm.models.schemas import ModelConfig, SpectralConfig
from koss_ssm.numerics.linalg import CONDITION_LIMIT, mat_exp
from koss_ssm.utils.logging import logger

DiscretizeMode = Literal["euler", "expm"]

_SERIES_RADIUS = 0.5
_SERIES_TERMS = 24


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def inverse_softplus(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


def silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


@dataclass
class KossParams:
    """Learnable tensors of one KOSS block; ``cfg`` fixes the shapes."""
    cfg: ModelConfig
    a_log: np.ndarray      # (D, N)
    w_delta: np.ndarray    # (D, D)
    b_delta: np.ndarray    # (D,)
    w_c: np.ndarray        # (D, N)
    gain_w1: np.ndarray    # (H,)
    gain_b1: np.ndarray    # (H,)
    gain_w2: np.ndarray    # (H, N)
    gain_b2: np.ndarray    # (N,)
    out_proj: np.ndarray   # (D, D)
    mlp_w1: np.ndarray     # (D, F)
    mlp_b1: np.ndarray     # (F,)
    mlp_w2: np.ndarray     # (F, D)
    mlp_b2: np.ndarray     # (D,)

    TENSOR_NAMES = (
        "a_log", "w_delta", "b_delta", "w_c", "gain_w1", "gain_b1", "gain_w2", "gain_b2",
        "out_proj", "mlp_w1", "mlp_b1", "mlp_w2", "mlp_b2",
    )

    def __post_init__(self):
        if not np.all(np.isfinite(np.exp(self.a_log))):
            raise ConfigError("exp(a_log) must be finite")
        expected = param_shapes(self.cfg)
        for name in self.TENSOR_NAMES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != expected[name]:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {expected[name]}")
            setattr(self, name, arr)

    @property
    def gain_scale(self) -> float:
        return self.cfg.gain_scale

    @property
    def a(self) -> np.ndarray:
        return -np.exp(self.a_log)

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.TENSOR_NAMES}

    @classmethod
    def from_tensors(cls, cfg: ModelConfig, tensors: Dict[str, np.ndarray]) -> "KossParams":
        missing = [n for n in cls.TENSOR_NAMES if n not in tensors]
        if missing:
            raise ConfigError(f"missing KOSS tensors: {', '.join(missing)}")
        return cls(cfg=cfg, **{n: tensors[n] for n in cls.TENSOR_NAMES})


def gain_hidden(cfg: ModelConfig) -> int:
    return 4 * cfg.d_state


def param_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    d, n, h = cfg.d_model, cfg.d_state, gain_hidden(cfg)
    f = cfg.mlp_ratio * d
    return {
        "a_log": (d, n), "w_delta": (d, d), "b_delta": (d,), "w_c": (d, n),
        "gain_w1": (h,), "gain_b1": (h,), "gain_w2": (h, n), "gain_b2": (n,),
        "out_proj": (d, d), "mlp_w1": (d, f), "mlp_b1": (f,), "mlp_w2": (f, d), "mlp_b2": (d,),
    }


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> KossParams:
    """
    Random initialisation.

    |A| spans [1/N, 1] log-uniformly in every channel and b_delta is set so that
    softplus(b_delta) is log-uniform in [delta_min, delta_max].
    """
    d, n, h = cfg.d_model, cfg.d_state, gain_hidden(cfg)
    f = cfg.mlp_ratio * d
    a_log = np.tile(np.linspace(math.log(1.0 / n), 0.0, n), (d, 1))
    deltas = np.exp(rng.uniform(math.log(cfg.delta_min), math.log(cfg.delta_max), size=d))
    return KossParams(
        cfg=cfg,
        a_log=a_log,
        w_delta=rng.normal(0.0, 0.1 / math.sqrt(d), size=(d, d)),
        b_delta=inverse_softplus(deltas),
        w_c=rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, n)),
        gain_w1=rng.normal(0.0, 1.0, size=h),
        gain_b1=np.zeros(h),
        gain_w2=rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, n)),
        gain_b2=np.zeros(n),
        out_proj=rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, d)),
        mlp_w1=rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, f)),
        mlp_b1=np.zeros(f),
        mlp_w2=rng.normal(0.0, 1.0 / math.sqrt(f), size=(f, d)),
        mlp_b2=np.zeros(d),
    )


def zero_params(cfg: ModelConfig) -> KossParams:
    shapes = param_shapes(cfg)
    return KossParams(cfg=cfg, **{name: np.zeros(shape) for name, shape in shapes.items()})


@dataclass
class LayerState:
    """Boundary state and the context state for the next segment, (B, D, N) each."""
    h: np.ndarray
    h_ctx: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.h_ctx is None:
            self.h_ctx = self.h
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.h_ctx))):
            raise NonFiniteError("layer state is not finite", where="state")

    @classmethod
    def zeros(cls, batch: int, cfg: ModelConfig) -> "LayerState":
        h = np.zeros((batch, cfg.d_model, cfg.d_state))
        return cls(h=h, h_ctx=h)


@dataclass
class StepDynamics:
    a_bar: np.ndarray
    b_bar: np.ndarray
    k: Optional[np.ndarray] = None


def innovation(x_t, c_t, h_ctx) -> np.ndarray:
    """x_t - c_t . h_ctx, broadcasting over leading axes."""
    return np.asarray(x_t) - np.sum(np.asarray(c_t) * np.asarray(h_ctx), axis=-1)


def gain_net(innov, params: KossParams) -> np.ndarray:
    """Map innovations of any shape (...) to gains (..., N) bounded by gain_scale."""
    innov = np.asarray(innov, dtype=float)
    hidden = silu(innov[..., None] * params.gain_w1 + params.gain_b1)
    return params.gain_scale * np.tanh(hidden @ params.gain_w2 + params.gain_b2)


def bound_gain(k, c_row, gain_scale: float) -> np.ndarray:
    """Shrink K so that |K| |C| <= gain_scale / 2; the last axis of both is N."""
    k = np.asarray(k, dtype=float)
    c_row = np.asarray(c_row, dtype=float)
    kk = np.sum(k * k, axis=-1, keepdims=True)
    cc = np.sum(c_row * c_row, axis=-1, keepdims=True)
    return k / (1.0 + kk * cc / gain_scale ** 2)


def build_dynamics(a_diag, k, c_row) -> Tuple[np.ndarray, np.ndarray]:
    """
    A_K = M (I + K C) and B_K = -M K with M = A - K (C A), using the rank-1 form

        A_K = diag(a) - k (c * a)^T + (M k) c^T,   M k = a * k - k ((c * a) . k)

    All arguments broadcast over leading axes; the last axis is N.
    """
    a_diag, k, c_row = np.broadcast_arrays(np.asarray(a_diag, dtype=float),
                                           np.asarray(k, dtype=float),
                                           np.asarray(c_row, dtype=float))
    ca = c_row * a_diag
    mk = a_diag * k - k * np.sum(ca * k, axis=-1, keepdims=True)
    n = a_diag.shape[-1]
    a_k = (a_diag[..., None] * np.eye(n)
           - k[..., :, None] * ca[..., None, :]
           + mk[..., :, None] * c_row[..., None, :])
    return a_k, -mk


def _zoh_input(a_k: np.ndarray, b_k: np.ndarray, delta: np.ndarray, a_bar: np.ndarray) -> np.ndarray:
    n = a_k.shape[-1]
    scaled = delta[..., None, None] * a_k
    norms = np.abs(scaled).sum(axis=-2).max(axis=-1)
    b_bar = np.empty_like(b_k)

    small = norms < _SERIES_RADIUS
    if np.any(small):
        # sum_m Delta^{m+1} A_K^m / (m+1)!  applied to B_K
        s_mat, d_s = scaled[small], delta[small][..., None]
        term = d_s * b_k[small]
        total = term.copy()
        for m in range(1, _SERIES_TERMS):
            term = np.matmul(s_mat, term[..., None])[..., 0] / (m + 1)
            total += term
        b_bar[small] = total

    large = ~small
    if np.any(large):
        ak_l, ab_l, bk_l = a_k[large], a_bar[large], b_k[large]
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(ak_l)
        ok = np.isfinite(cond) & (cond < CONDITION_LIMIT)
        out = np.empty_like(bk_l)
        if np.any(ok):
            rhs = np.matmul(ab_l[ok] - np.eye(n), bk_l[ok][..., None])
            out[ok] = np.linalg.solve(ak_l[ok], rhs)[..., 0]
        if np.any(~ok):
            logger.warning(f"A_K near-singular at {int((~ok).sum())} steps; using the augmented exponential")
            out[~ok] = _augmented_zoh(ak_l[~ok], bk_l[~ok], delta[large][~ok])
        b_bar[large] = out
    return b_bar


def _augmented_zoh(a_k: np.ndarray, b_k: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Read Bbar off exp([[Delta A_K, Delta B_K], [0, 0]])."""
    n = a_k.shape[-1]
    aug = np.zeros(a_k.shape[:-2] + (n + 1, n + 1))
    aug[..., :n, :n] = delta[..., None, None] * a_k
    aug[..., :n, n] = delta[..., None] * b_k
    b_bar = mat_exp(aug)[..., :n, n]
    if not np.all(np.isfinite(b_bar)):
        raise SingularMatrixError("zero-order hold input map failed", condition=math.inf)
    return b_bar


def discretize(a_k, b_k, delta, mode: DiscretizeMode = "euler") -> StepDynamics:
    """
    Discretise (A_K, B_K) with step ``delta``.

    euler: Abar = I + Delta A_K, Bbar = Delta B_K.
    expm:  Abar = exp(Delta A_K), Bbar = A_K^-1 (Abar - I) B_K, or its power
           series when ||Delta A_K||_1 < 0.5.
    """
    a_k = np.asarray(a_k, dtype=float)
    b_k = np.asarray(b_k, dtype=float)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), a_k.shape[:-2])
    if not np.all(delta > 0):
        raise ConfigError("discretize needs delta > 0")
    n = a_k.shape[-1]
    if mode == "euler":
        return StepDynamics(a_bar=np.eye(n) + delta[..., None, None] * a_k, b_bar=delta[..., None] * b_k)
    if mode == "expm":
        a_bar = mat_exp(delta[..., None, None] * a_k)
        return StepDynamics(a_bar=a_bar, b_bar=_zoh_input(a_k, b_k, delta, a_bar))
    raise ConfigError(f"unknown discretisation mode '{mode}'")


def recurrence_step(h, x_t, dx_t, dyn: StepDynamics) -> np.ndarray:
    """h' = Abar h + Bbar x_t + K dx_t."""
    h = np.asarray(h, dtype=float)
    out = np.matmul(dyn.a_bar, h[..., None])[..., 0] + dyn.b_bar * np.asarray(x_t)[..., None]
    if dyn.k is not None:
        out = out + dyn.k * np.asarray(dx_t)[..., None]
    return out


def spectral_config(cfg: ModelConfig, length: int) -> SpectralConfig:
    if cfg.mask_kind == "none":
        return SpectralConfig(n=length, dt=cfg.sample_dt)
    return SpectralConfig(n=length, dt=cfg.sample_dt, mask_kind=cfg.mask_kind,
                          omega_cut=math.pi / (2.0 * cfg.sample_dt))


def input_derivative(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """SDU estimate of dx/dt along the length axis of (B, L, D), zeros when disabled."""
    if not cfg.use_sdu or x.shape[1] < 2:
        return np.zeros_like(x)
    return spectral_derivative(x, spectral_config(cfg, x.shape[1]), axis=1)


def _check_finite(arr: np.ndarray, what: str, offset: int = 0):
    if np.all(np.isfinite(arr)):
        return
    b, t, d = np.argwhere(~np.isfinite(arr))[0][:3]
    raise NonFiniteError(f"non-finite {what}", where=f"batch {b}, position {offset + t}, channel {d}")


class _SegmentDynamics:
    """Projections shared by every segment plus the element factory for the scan."""

    def __init__(self, x: np.ndarray, params: KossParams, mode: DiscretizeMode):
        cfg = params.cfg
        self.x = x
        self.params = params
        self.mode = mode
        self.a = params.a
        self.dx = input_derivative(x, cfg)
        self.delta = softplus(x @ params.w_delta + params.b_delta)
        self.c = x @ params.w_c
        self.use_innovation = cfg.gain_input == "innovation"

    def __call__(self, start: int, stop: int, h_ctx: np.ndarray) -> ScanElement:
        xs = self.x[:, start:stop]
        cs = self.c[:, start:stop]
        if self.use_innovation:
            innov = xs - np.einsum("bsn,bdn->bsd", cs, h_ctx)
        else:
            innov = xs
        c_rows = cs[:, :, None, :]
        k = bound_gain(gain_net(innov, self.params), c_rows, self.params.gain_scale)
        a_k, b_k = build_dynamics(self.a, k, c_rows)
        dyn = discretize(a_k, b_k, self.delta[:, start:stop], self.mode)
        v = dyn.b_bar * xs[..., None] + k * self.dx[:, start:stop, :, None]
        _check_finite(v, "scan offset", offset=start)
        # scan wants time first: (S, B, D, ...)
        return ScanElement(np.moveaxis(dyn.a_bar, 1, 0), np.moveaxis(v, 1, 0))


def layer_forward(x, params: KossParams, segment_len: int, mode: DiscretizeMode = "euler",
                  state: Optional[LayerState] = None, threads: int = 1) -> Tuple[np.ndarray, LayerState]:
    """
    Run one KOSS layer over ``x`` of shape (B, L, D).

    C_t is computed once per position as x_t W_c, a single N-row shared by
    every channel; A, Delta and the states stay per channel.

    Args:
        x: input sequences
        params: layer parameters
        segment_len: S, the number of positions sharing one context state
        mode: "euler" or "expm" discretisation
        state: boundary state carried over from a previous call
        threads: work-pool size for the intra-segment scan

    Returns:
        (y of shape (B, L, D), LayerState after the last position)

    Raises:
        NonFiniteError: an activation became NaN or Inf (position reported)
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 3 or x.shape[2] != params.cfg.d_model:
        raise ConfigError(f"layer_forward expects (B, L, {params.cfg.d_model}), got {x.shape}")
    batch, length, _ = x.shape
    plan = SegmentPlan(total_len=length, segment_len=segment_len)
    h0 = (state.h if state is not None else LayerState.zeros(batch, params.cfg).h)
    dynamics = _SegmentDynamics(x, params, mode)
    result = segment_scan(dynamics, plan, h0, threads=threads)
    h = np.moveaxis(result.states, 0, 1)  # (B, L, D, N)
    y = np.einsum("bln,bldn->bld", dynamics.c, h)
    _check_finite(y, "layer output")
    return y, LayerState(h=result.final_state, h_ctx=result.final_state)


def layer_forward_reference(x, params: KossParams, mode: DiscretizeMode = "euler") -> np.ndarray:
    """Step-by-step recurrence with the innovation recomputed from h_{t-1} every step."""
    x = np.asarray(x, dtype=float)
    batch, length, _ = x.shape
    cfg = params.cfg
    a = params.a
    dx = input_derivative(x, cfg)
    delta = softplus(x @ params.w_delta + params.b_delta)
    c = x @ params.w_c
    h = np.zeros((batch, cfg.d_model, cfg.d_state))
    y = np.empty_like(x)
    for t in range(length):
        c_t = c[:, t, None, :]
        innov = innovation(x[:, t], c_t, h) if cfg.gain_input == "innovation" else x[:, t]
        k = bound_gain(gain_net(innov, params), c_t, params.gain_scale)
        a_k, b_k = build_dynamics(a, k, c_t)
        dyn = discretize(a_k, b_k, delta[:, t], mode)
        dyn.k = k
        h = recurrence_step(h, x[:, t], dx[:, t], dyn)
        y[:, t] = np.sum(c_t * h, axis=-1)
    return y


def block_forward(x, params: KossParams, segment_len: Optional[int] = None,
                  mode: DiscretizeMode = "euler", threads: int = 1) -> np.ndarray:
    """z = x + layer(x) out_proj, then z + W2 silu(W1 z + b1) + b2."""
    x = np.asarray(x, dtype=float)
    seg = segment_len if segment_len is not None else min(params.cfg.segment_len, x.shape[1])
    y, _ = layer_forward(x, params, seg, mode=mode, threads=threads)
    z = x + y @ params.out_proj
    return z + silu(z @ params.mlp_w1 + params.mlp_b1) @ params.mlp_w2 + params.mlp_b2
