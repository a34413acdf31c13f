"""
Minimal reverse-mode automatic differentiation on a tape.

Every operation appends a :class:`Node` holding its forward value and whatever
the backward rule needs; :func:`backward` walks the tape in reverse and looks
each op up in ``BACKWARD_RULES``. The op set is closed: it is exactly what the
KOSS block, its heads and the losses use.
"""
import numbers
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from koss_ssm.core.scan import ScanElement, inclusive_scan
from koss_ssm.core.sdu import spectral_derivative, spectral_derivative_adjoint
from koss_ssm.errors import ConfigError, UnsupportedOpError
from koss_ssm.models.schemas import SpectralConfig


@dataclass
class Node:
    op: str
    inputs: Tuple[int, ...]
    value: np.ndarray
    cache: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None


class Tape:
    """Append-only list of nodes; inputs always precede the node that uses them."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes: List[Node] = []

    def _push(self, node: Node) -> "Var":
        self.nodes.append(node)
        return Var(self, len(self.nodes) - 1)

    def param(self, value, name: str) -> "Var":
        return self._push(Node("param", (), np.asarray(value, dtype=self.dtype), name=name))

    def constant(self, value) -> "Var":
        return self._push(Node("const", (), np.asarray(value, dtype=self.dtype)))

    def record(self, op: str, inputs: Sequence["Var"], value, **cache) -> "Var":
        for v in inputs:
            if v.tape is not self:
                raise ConfigError("cannot mix variables from different tapes")
        return self._push(Node(op, tuple(v.index for v in inputs), np.asarray(value), cache))

    def lift(self, value: Union["Var", float, np.ndarray]) -> "Var":
        return value if isinstance(value, Var) else self.constant(value)


class Var:
    """Handle to a tape node with arithmetic operators."""
    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)


def _tape_of(*items) -> Tape:
    for it in items:
        if isinstance(it, Var):
            return it.tape
    raise ConfigError("operation needs at least one tape variable")


def _lift2(a, b) -> Tuple[Var, Var]:
    tape = _tape_of(a, b)
    return tape.lift(a), tape.lift(b)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _swap(m: np.ndarray) -> np.ndarray:
    return np.swapaxes(m, -1, -2)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# ---------------------------------------------------------------- forward ops

def add(a, b) -> Var:
    a, b = _lift2(a, b)
    return a.tape.record("add", (a, b), a.value + b.value)


def sub(a, b) -> Var:
    a, b = _lift2(a, b)
    return a.tape.record("sub", (a, b), a.value - b.value)


def mul(a, b) -> Var:
    a, b = _lift2(a, b)
    return a.tape.record("mul", (a, b), a.value * b.value)


def neg(a: Var) -> Var:
    return a.tape.record("neg", (a,), -a.value)


def matmul(a, b) -> Var:
    """np.matmul for operands with at least two axes (leading axes broadcast)."""
    a, b = _lift2(a, b)
    if a.value.ndim < 2 or b.value.ndim < 2:
        raise ConfigError("matmul needs operands with at least two axes; use matvec for vectors")
    return a.tape.record("matmul", (a, b), np.matmul(a.value, b.value))


def matvec(m, v) -> Var:
    m, v = _lift2(m, v)
    return m.tape.record("matvec", (m, v), np.matmul(m.value, v.value[..., None])[..., 0])


def outer(a, b) -> Var:
    """a[..., :, None] * b[..., None, :]."""
    a, b = _lift2(a, b)
    return a.tape.record("outer", (a, b), a.value[..., :, None] * b.value[..., None, :])


def sum_(a: Var, axis=None, keepdims: bool = False) -> Var:
    return a.tape.record("sum", (a,), np.sum(a.value, axis=axis, keepdims=keepdims),
                         axis=axis, keepdims=keepdims)


def mean(a: Var, axis=None, keepdims: bool = False) -> Var:
    return a.tape.record("mean", (a,), np.mean(a.value, axis=axis, keepdims=keepdims),
                         axis=axis, keepdims=keepdims)


def gather(table: Var, idx) -> Var:
    """Rows of ``table`` selected by an integer index array (embedding lookup)."""
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ConfigError("gather needs integer indices")
    if idx.size and (idx.min() < 0 or idx.max() >= table.value.shape[0]):
        raise ConfigError(f"gather index out of range [0, {table.value.shape[0]})")
    return table.tape.record("gather", (table,), table.value[idx], idx=idx)


def tanh(a: Var) -> Var:
    return a.tape.record("tanh", (a,), np.tanh(a.value))


def sigmoid(a: Var) -> Var:
    return a.tape.record("sigmoid", (a,), _sigmoid(a.value))


def silu(a: Var) -> Var:
    return a.tape.record("silu", (a,), a.value * _sigmoid(a.value))


def softplus(a: Var) -> Var:
    return a.tape.record("softplus", (a,), np.logaddexp(0.0, a.value).astype(a.value.dtype))


def exp(a: Var) -> Var:
    return a.tape.record("exp", (a,), np.exp(a.value))


def reciprocal(a: Var) -> Var:
    return a.tape.record("reciprocal", (a,), 1.0 / a.value)


def abs_(a: Var) -> Var:
    return a.tape.record("abs", (a,), np.abs(a.value))


def sdu(a: Var, cfg: SpectralConfig, axis: int = -1) -> Var:
    """Spectral derivative along ``axis``; linear, so the backward rule is its adjoint."""
    value = spectral_derivative(a.value, cfg, axis=axis).astype(a.value.dtype)
    return a.tape.record("sdu", (a,), value, cfg=cfg, axis=axis)


def reshape(a: Var, shape) -> Var:
    return a.tape.record("reshape", (a,), a.value.reshape(shape))


def transpose(a: Var, axes: Sequence[int]) -> Var:
    return a.tape.record("transpose", (a,), np.transpose(a.value, axes), axes=tuple(axes))


def index(a: Var, key) -> Var:
    """Basic (static) indexing: ints and slices only."""
    parts = key if isinstance(key, tuple) else (key,)
    if not all(isinstance(p, (numbers.Integral, slice, type(Ellipsis))) for p in parts):
        raise ConfigError("index supports ints, slices and Ellipsis only")
    return a.tape.record("index", (a,), a.value[key], key=key)


def concat(items: Sequence[Var], axis: int = 0) -> Var:
    tape = _tape_of(*items)
    values = [v.value for v in items]
    sizes = [v.shape[axis] for v in values]
    return tape.record("concat", tuple(items), np.concatenate(values, axis=axis), axis=axis, sizes=sizes)


def cross_entropy(logits: Var, targets) -> Var:
    """Mean negative log-softmax of ``targets`` over all leading positions."""
    targets = np.asarray(targets)
    z = logits.value
    if targets.shape != z.shape[:-1]:
        raise ConfigError(f"targets shape {targets.shape} does not match logits {z.shape}")
    vocab = z.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ConfigError(f"target index out of range [0, {vocab})")
    z64 = z.astype(np.float64)
    shifted = z64 - z64.max(axis=-1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    picked = np.take_along_axis(log_probs, targets[..., None], axis=-1)[..., 0]
    loss = -picked.mean()
    return logits.tape.record("cross_entropy", (logits,), np.asarray(loss, dtype=z.dtype),
                              probs=np.exp(log_probs), targets=targets)


def affine_scan(a_bar: Var, v: Var, h0: Var) -> Var:
    """
    States of h_t = Abar_t h_{t-1} + v_t for t = 0..T-1.

    ``a_bar`` is (T, ..., N, N), ``v`` is (T, ..., N) and ``h0`` broadcasts
    against v[0].
    """
    states = inclusive_scan(ScanElement(a_bar.value, v.value), h0.value)
    return a_bar.tape.record("affine_scan", (a_bar, v, h0), states.astype(v.value.dtype))


# --------------------------------------------------------------- backward ops

BackwardRule = Callable[[Node, np.ndarray, List[np.ndarray]], List[Optional[np.ndarray]]]


def _expand_reduced(g: np.ndarray, node: Node, shape) -> np.ndarray:
    axis, keepdims = node.cache["axis"], node.cache["keepdims"]
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _reduced_count(node: Node, shape) -> int:
    axis = node.cache["axis"]
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if np.isscalar(axis) else tuple(axis)
    return int(np.prod([shape[ax] for ax in axes]))


def _bw_matmul(node, g, x):
    a, b = x
    return [unbroadcast(np.matmul(g, _swap(b)), a.shape), unbroadcast(np.matmul(_swap(a), g), b.shape)]


def _bw_matvec(node, g, x):
    m, v = x
    gm = g[..., :, None] * v[..., None, :]
    gv = np.matmul(_swap(m), g[..., None])[..., 0]
    return [unbroadcast(gm, m.shape), unbroadcast(gv, v.shape)]


def _bw_outer(node, g, x):
    a, b = x
    return [unbroadcast(np.sum(g * b[..., None, :], axis=-1), a.shape),
            unbroadcast(np.sum(g * a[..., :, None], axis=-2), b.shape)]


def _bw_gather(node, g, x):
    out = np.zeros_like(x[0])
    np.add.at(out, node.cache["idx"], g)
    return [out]


def _bw_silu(node, g, x):
    s = _sigmoid(x[0])
    return [g * (s + x[0] * s * (1.0 - s))]


def _bw_index(node, g, x):
    out = np.zeros_like(x[0])
    out[node.cache["key"]] = g
    return [out]


def _bw_concat(node, g, x):
    edges = np.cumsum(node.cache["sizes"])[:-1]
    return list(np.split(g, edges, axis=node.cache["axis"]))


def _bw_cross_entropy(node, g, x):
    probs = node.cache["probs"]
    targets = node.cache["targets"]
    grad = probs.copy()
    np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
    return [(g * grad / max(targets.size, 1)).astype(x[0].dtype)]


def _bw_affine_scan(node, g, x):
    a_bar, v, h0 = x
    states = node.value
    t = a_bar.shape[0]
    n = a_bar.shape[-1]
    # lambda_t = g_t + Abar_{t+1}^T lambda_{t+1}, run as a forward scan in reversed time
    a_rev = _swap(a_bar[::-1])
    eye = np.broadcast_to(np.eye(n, dtype=a_bar.dtype), a_bar.shape[1:])
    m = np.concatenate([eye[None], a_rev[:-1]], axis=0)
    lam = inclusive_scan(ScanElement(m, np.ascontiguousarray(g[::-1])), np.zeros(v.shape[1:], dtype=v.dtype))
    lam = lam[::-1]
    h_prev = np.concatenate([np.broadcast_to(h0, v.shape[1:])[None], states[:-1]], axis=0)
    grad_a = lam[..., :, None] * h_prev[..., None, :]
    grad_h0 = np.matmul(_swap(a_bar[0]), lam[0][..., None])[..., 0]
    return [grad_a, lam, unbroadcast(grad_h0, h0.shape)]


BACKWARD_RULES: Dict[str, BackwardRule] = {
    "add": lambda n, g, x: [unbroadcast(g, x[0].shape), unbroadcast(g, x[1].shape)],
    "sub": lambda n, g, x: [unbroadcast(g, x[0].shape), unbroadcast(-g, x[1].shape)],
    "mul": lambda n, g, x: [unbroadcast(g * x[1], x[0].shape), unbroadcast(g * x[0], x[1].shape)],
    "neg": lambda n, g, x: [-g],
    "matmul": _bw_matmul,
    "matvec": _bw_matvec,
    "outer": _bw_outer,
    "sum": lambda n, g, x: [_expand_reduced(g, n, x[0].shape).copy()],
    "mean": lambda n, g, x: [_expand_reduced(g, n, x[0].shape) / _reduced_count(n, x[0].shape)],
    "gather": _bw_gather,
    "tanh": lambda n, g, x: [g * (1.0 - n.value ** 2)],
    "sigmoid": lambda n, g, x: [g * n.value * (1.0 - n.value)],
    "silu": _bw_silu,
    "softplus": lambda n, g, x: [g * _sigmoid(x[0])],
    "exp": lambda n, g, x: [g * n.value],
    "reciprocal": lambda n, g, x: [-g * n.value ** 2],
    "abs": lambda n, g, x: [g * np.sign(x[0])],
    "sdu": lambda n, g, x: [spectral_derivative_adjoint(g, n.cache["cfg"], axis=n.cache["axis"])],
    "reshape": lambda n, g, x: [g.reshape(x[0].shape)],
    "transpose": lambda n, g, x: [np.transpose(g, np.argsort(n.cache["axes"]))],
    "index": _bw_index,
    "concat": _bw_concat,
    "cross_entropy": _bw_cross_entropy,
    "affine_scan": _bw_affine_scan,
}

_LEAVES = ("param", "const")


def backward(tape: Tape, loss: Var) -> Dict[str, np.ndarray]:
    """
    Gradients of a scalar ``loss`` with respect to every named parameter.

    Raises:
        ConfigError: the loss is not a scalar
        UnsupportedOpError: a node's op has no backward rule
    """
    if loss.value.size != 1:
        raise ConfigError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    grads: Dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value, dtype=np.float64)}
    for i in range(loss.index, -1, -1):
        node = tape.nodes[i]
        g = grads.pop(i, None) if node.op not in _LEAVES else grads.get(i)
        if g is None or node.op in _LEAVES:
            continue
        rule = BACKWARD_RULES.get(node.op)
        if rule is None:
            raise UnsupportedOpError(node.op)
        inputs = [tape.nodes[j].value for j in node.inputs]
        for j, gj in zip(node.inputs, rule(node, g, inputs)):
            if gj is None:
                continue
            grads[j] = grads[j] + gj if j in grads else np.asarray(gj)
    out: Dict[str, np.ndarray] = {}
    for i, node in enumerate(tape.nodes):
        if node.op == "param":
            g = grads.get(i)
            out[node.name] = (np.zeros_like(node.value) if g is None else g.astype(node.value.dtype))
    return out
