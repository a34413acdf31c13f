"""
Differentiable models built from tape operations.

``koss_layer``/``koss_block`` mirror :func:`koss_ssm.core.layer.layer_forward`
and :func:`koss_ssm.core.layer.block_forward` in euler mode, segment by
segment, so gradients also flow through the context state handed from one
segment to the next.
"""
import math
from typing import Dict, Iterable, Optional, Protocol

import numpy as np

from koss_ssm.core.layer import init_params as init_layer_params
from koss_ssm.core.layer import spectral_config
from koss_ssm.errors import ConfigError
from koss_ssm.models.schemas import ModelConfig
from koss_ssm.tasks.copying import copying_accuracy
from koss_ssm.train import autodiff as ad
from koss_ssm.train.autodiff import Tape, Var
from koss_ssm.train.losses import cross_entropy_value, mae, mse, mse_loss

Params = Dict[str, np.ndarray]
Batch = Dict[str, np.ndarray]


class Model(Protocol):
    def init_params(self, rng: np.random.Generator) -> Params: ...

    def loss(self, tape: Tape, p: Dict[str, Var], batch: Batch) -> Var: ...

    def evaluate(self, params: Params, batch: Batch) -> Dict[str, float]: ...


def bind(tape: Tape, params: Params) -> Dict[str, Var]:
    return {name: tape.param(value, name) for name, value in params.items()}


def layer_param_arrays(cfg: ModelConfig, rng: np.random.Generator, prefix: str) -> Params:
    return {prefix + name: arr for name, arr in init_layer_params(cfg, rng).tensors().items()}


def koss_layer(p: Dict[str, Var], x: Var, cfg: ModelConfig, prefix: str = "") -> Var:
    """KOSS layer output y of shape (B, L, D) for input x of shape (B, L, D)."""
    tape = x.tape
    batch, length, d = x.shape
    n = cfg.d_state
    seg = min(cfg.segment_len, length)

    if cfg.use_sdu and length >= 2:
        dx = ad.sdu(x, spectral_config(cfg, length), axis=1)
    else:
        dx = tape.constant(np.zeros(x.shape))
    delta = ad.softplus(x @ p[prefix + "w_delta"] + p[prefix + "b_delta"])
    c = x @ p[prefix + "w_c"]
    a = ad.neg(ad.exp(p[prefix + "a_log"]))
    a_diag = ad.reshape(a, (d, n, 1)) * np.eye(n)
    eye = np.eye(n)

    h_ctx = tape.constant(np.zeros((batch, d, n)))
    chunks = []
    for start in range(0, length, seg):
        stop = min(start + seg, length)
        s = stop - start
        xs = x[:, start:stop]
        cs = ad.reshape(c[:, start:stop], (batch, s, 1, n))
        if cfg.gain_input == "innovation":
            pred = ad.sum_(cs * ad.reshape(h_ctx, (batch, 1, d, n)), axis=-1)
            innov = xs - pred
        else:
            innov = xs
        hidden = ad.silu(ad.reshape(innov, (batch, s, d, 1)) * p[prefix + "gain_w1"] + p[prefix + "gain_b1"])
        phi = cfg.gain_scale * ad.tanh(hidden @ p[prefix + "gain_w2"] + p[prefix + "gain_b2"])
        # |K| |C| <= gain_scale / 2
        kk = ad.sum_(phi * phi, axis=-1, keepdims=True)
        cc = ad.sum_(cs * cs, axis=-1, keepdims=True)
        k = phi * ad.reciprocal(1.0 + kk * cc * (1.0 / cfg.gain_scale ** 2))

        ca = cs * a
        gamma = ad.sum_(ca * k, axis=-1, keepdims=True)
        mk = a * k - k * gamma
        a_k = a_diag - ad.outer(k, ca) + ad.outer(mk, cs)
        ds = ad.reshape(delta[:, start:stop], (batch, s, d, 1))
        a_bar = ad.reshape(ds, (batch, s, d, 1, 1)) * a_k + eye
        v = ds * ad.neg(mk) * ad.reshape(xs, (batch, s, d, 1)) \
            + k * ad.reshape(dx[:, start:stop], (batch, s, d, 1))

        states = ad.affine_scan(ad.transpose(a_bar, (1, 0, 2, 3, 4)), ad.transpose(v, (1, 0, 2, 3)), h_ctx)
        h_ctx = states[s - 1]
        chunks.append(states)

    h = ad.transpose(ad.concat(chunks, axis=0), (1, 0, 2, 3))  # (B, L, D, N)
    return ad.sum_(ad.reshape(c, (batch, length, 1, n)) * h, axis=-1)


def koss_block(p: Dict[str, Var], x: Var, cfg: ModelConfig, prefix: str = "") -> Var:
    z = x + koss_layer(p, x, cfg, prefix) @ p[prefix + "out_proj"]
    hidden = ad.silu(z @ p[prefix + "mlp_w1"] + p[prefix + "mlp_b1"])
    return z + hidden @ p[prefix + "mlp_w2"] + p[prefix + "mlp_b2"]


def _stack(p: Dict[str, Var], x: Var, cfg: ModelConfig) -> Var:
    for i in range(cfg.n_layers):
        x = koss_block(p, x, cfg, prefix=f"layers.{i}.")
    return x


class CopyingModel:
    """Token embedding, a stack of KOSS blocks and a linear read-out at the recall positions."""

    def __init__(self, cfg: ModelConfig, vocab_size: int, n_targets: int, dtype=np.float32):
        self.cfg = cfg
        self.vocab_size = vocab_size
        self.n_targets = n_targets
        self.dtype = dtype

    def init_params(self, rng: np.random.Generator) -> Params:
        d, v = self.cfg.d_model, self.vocab_size
        params: Params = {"embed": rng.normal(0.0, 1.0, size=(v, d))}
        for i in range(self.cfg.n_layers):
            params.update(layer_param_arrays(self.cfg, rng, f"layers.{i}."))
        params["head_w"] = rng.normal(0.0, 1.0 / math.sqrt(d), size=(d, v))
        params["head_b"] = np.zeros(v)
        return params

    def logits(self, p: Dict[str, Var], tokens: np.ndarray) -> Var:
        tokens = np.asarray(tokens)
        length = tokens.shape[1]
        if self.n_targets > length:
            raise ConfigError("more targets than positions")
        x = _stack(p, ad.gather(p["embed"], tokens), self.cfg)
        tail = x[:, length - self.n_targets:length]
        return tail @ p["head_w"] + p["head_b"]

    def loss(self, tape: Tape, p: Dict[str, Var], batch: Batch) -> Var:
        return ad.cross_entropy(self.logits(p, batch["tokens"]), batch["targets"])

    def predict(self, params: Params, tokens: np.ndarray) -> np.ndarray:
        tape = Tape(self.dtype)
        return self.logits(bind(tape, params), tokens).value

    def evaluate(self, params: Params, batch: Batch) -> Dict[str, float]:
        logits = self.predict(params, batch["tokens"])
        return {
            "loss": cross_entropy_value(logits, batch["targets"]),
            "accuracy": copying_accuracy(logits, batch["targets"]),
        }


class ForecastModel:
    """
    Channel projection, KOSS blocks and a linear map from lookback to horizon.

    Inputs are centred on their last observed value and the value is added back
    to the forecast; with zero temporal weights the model is the persistence
    forecast.
    """

    def __init__(self, cfg: ModelConfig, n_channels: int, lookback: int, horizon: int, dtype=np.float32):
        self.cfg = cfg
        self.n_channels = n_channels
        self.lookback = lookback
        self.horizon = horizon
        self.dtype = dtype

    def init_params(self, rng: np.random.Generator) -> Params:
        d, c = self.cfg.d_model, self.n_channels
        params: Params = {
            "in_w": rng.normal(0.0, 1.0 / math.sqrt(c), size=(c, d)),
            "in_b": np.zeros(d),
        }
        for i in range(self.cfg.n_layers):
            params.update(layer_param_arrays(self.cfg, rng, f"layers.{i}."))
        params["out_w"] = rng.normal(0.0, 0.1 / math.sqrt(d), size=(d, c))
        params["out_b"] = np.zeros(c)
        params["time_w"] = np.zeros((self.lookback, self.horizon))
        params["time_b"] = np.zeros(self.horizon)
        return params

    def forward(self, p: Dict[str, Var], inputs: np.ndarray) -> Var:
        inputs = np.asarray(inputs)
        if inputs.shape[1:] != (self.lookback, self.n_channels):
            raise ConfigError(f"expected windows of shape (B, {self.lookback}, {self.n_channels}), got {inputs.shape}")
        tape = p["in_w"].tape
        last = inputs[:, -1:, :]
        centred = tape.constant(inputs - last)
        h = _stack(p, centred @ p["in_w"] + p["in_b"], self.cfg)
        feat = h @ p["out_w"] + p["out_b"] + centred
        per_channel = ad.transpose(feat, (0, 2, 1)) @ p["time_w"] + p["time_b"]
        return ad.transpose(per_channel, (0, 2, 1)) + last

    def loss(self, tape: Tape, p: Dict[str, Var], batch: Batch) -> Var:
        return mse_loss(self.forward(p, batch["inputs"]), batch["targets"])

    def predict(self, params: Params, inputs: np.ndarray) -> np.ndarray:
        tape = Tape(self.dtype)
        return self.forward(bind(tape, params), inputs).value

    def evaluate(self, params: Params, batch: Batch) -> Dict[str, float]:
        pred = self.predict(params, batch["inputs"])
        err = mse(pred, batch["targets"])
        return {"loss": err, "mse": err, "mae": mae(pred, batch["targets"])}


class LinearModel:
    """y = x W + b; the least-squares toy for the training loop."""

    def __init__(self, n_features: int, n_outputs: int = 1, dtype=np.float64):
        self.n_features = n_features
        self.n_outputs = n_outputs
        self.dtype = dtype

    def init_params(self, rng: np.random.Generator) -> Params:
        return {"w": rng.normal(0.0, 0.1, size=(self.n_features, self.n_outputs)), "b": np.zeros((1, self.n_outputs))}

    def forward(self, p: Dict[str, Var], x: np.ndarray) -> Var:
        return p["w"].tape.constant(x) @ p["w"] + p["b"]

    def loss(self, tape: Tape, p: Dict[str, Var], batch: Batch) -> Var:
        return mse_loss(self.forward(p, batch["x"]), batch["y"])

    def evaluate(self, params: Params, batch: Batch) -> Dict[str, float]:
        pred = np.asarray(batch["x"]) @ params["w"] + params["b"]
        return {"loss": mse(pred, batch["y"])}


def evaluate_batches(model: Model, params: Params, batches: Iterable[Batch]) -> Dict[str, float]:
    """Mean of every metric over ``batches``."""
    totals: Dict[str, float] = {}
    count = 0
    for batch in batches:
        for key, value in model.evaluate(params, batch).items():
            totals[key] = totals.get(key, 0.0) + value
        count += 1
    if count == 0:
        raise ConfigError("evaluation needs at least one batch")
    return {key: value / count for key, value in totals.items()}


def block_params(params: Params, layer: int = 0) -> Optional[Params]:
    prefix = f"layers.{layer}."
    out = {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}
    return out or None
