"""Dense float64 matrices with define-by-run reverse-mode differentiation.

Every value is a 2-D ``Tensor``. Operations on tensors that require gradients
record their parents and a vector-Jacobian product; ``backward`` walks the
recorded graph from a scalar loss and returns gradients for every leaf.

The traversal order is derived from the graph structure alone (depth-first
from the loss, parents in argument order), so gradient accumulation order does
not depend on which thread created which node.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, DomainError, ShapeError

LOG_FLOOR = 1e-12


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "vjp", "name", "__weakref__")

    def __init__(self, data, requires_grad=False, name=None, parents=(), vjp=None):
        arr = np.array(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.parents = parents
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_NO_GRAD = 0


@contextmanager
def no_grad():
    """Inside this block no history is recorded (process-wide, so worker threads agree)."""
    global _NO_GRAD
    _NO_GRAD += 1
    try:
        yield
    finally:
        _NO_GRAD -= 1


def _node(out, parents, vjp):
    """Wrap an op result; constants (no grad-requiring parent) keep no history."""
    if not _NO_GRAD and any(p.requires_grad for p in parents):
        return Tensor(out, requires_grad=True, parents=tuple(parents), vjp=vjp)
    return Tensor(out)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# elementwise --------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), vjp)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: zero in denominator")
    out = a.data / b.data

    def vjp(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _node(out, (a, b), vjp)


def scalar_mul(x, c: float):
    x = as_tensor(x)
    c = float(c)
    return _node(x.data * c, (x,), lambda g: (g * c,))


def tanh_op(x):
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp_op(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log_op(x):
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise DomainError("log of a non-positive entry")
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def clamp_min(x, floor: float):
    x = as_tensor(x)
    keep = x.data > floor
    return _node(np.where(keep, x.data, floor), (x,), lambda g: (g * keep,))


def safe_log(x, floor: float = LOG_FLOOR):
    return log_op(clamp_min(x, floor))


def leaky_relu(x, slope: float = 0.2):
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    x = as_tensor(x)
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope)
    return _node(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x):
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(x):
    """log(sigmoid(x)) without overflow for large |x|."""
    x = as_tensor(x)
    out = -np.logaddexp(0.0, -x.data)
    return _node(out, (x,), lambda g: (g * _stable_sigmoid(-x.data),))


def _stable_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# linear algebra and reshaping ----------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, (a, b), vjp)


def spmm(adj, x):
    """Constant sparse matrix times a dense tensor; only ``x`` receives a gradient."""
    x = as_tensor(x)
    if adj.shape[1] != x.rows:
        raise ShapeError(f"spmm: {adj.shape} @ {x.shape}")
    adj = sp.csr_matrix(adj)
    adj_t = adj.T.tocsr()
    return _node(np.asarray(adj @ x.data), (x,), lambda g: (np.asarray(adj_t @ g),))


def transpose(x):
    x = as_tensor(x)
    return _node(x.data.T.copy(), (x,), lambda g: (g.T,))


def concat_cols(parts):
    parts = [as_tensor(p) for p in parts]
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [p.cols for p in parts])

    def vjp(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), vjp)


def concat_rows(parts):
    parts = [as_tensor(p) for p in parts]
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise ShapeError(f"concat_rows: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [p.rows for p in parts])

    def vjp(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), vjp)


def slice_rows(x, start: int, stop: int):
    x = as_tensor(x)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        return (full,)

    return _node(x.data[start:stop].copy(), (x,), vjp)


def slice_cols(x, start: int, stop: int):
    x = as_tensor(x)

    def vjp(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _node(x.data[:, start:stop].copy(), (x,), vjp)


def index_rows(x, idx):
    """Gather rows by integer index; repeated indices accumulate in the gradient."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g):
        scatter = sp.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(x.rows, len(idx)))
        return (np.asarray(scatter @ g),)

    return _node(x.data[idx], (x,), vjp)


# reductions -----------------------------------------------------------------


def reduce_sum(x, axis=None):
    x = as_tensor(x)
    if axis is None:
        out = np.array([[x.data.sum()]])
    else:
        out = x.data.sum(axis=axis, keepdims=True)
    return _node(out, (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x):
    x = as_tensor(x)
    return scalar_mul(reduce_sum(x), 1.0 / x.data.size)


def frobenius_sq(x):
    x = as_tensor(x)
    return _node(np.array([[np.sum(x.data * x.data)]]), (x,), lambda g: (2.0 * g[0, 0] * x.data,))


def rowwise_softmax(x, temperature: float = 1.0):
    if temperature <= 0:
        raise ContractError(f"softmax temperature must be positive, got {temperature}")
    x = as_tensor(x)
    s = x.data / temperature
    s = s - s.max(axis=1, keepdims=True)
    e = np.exp(s)
    out = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return (out * (g - inner) / temperature,)

    return _node(out, (x,), vjp)


def log_softmax_rows(x):
    x = as_tensor(x)
    s = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(s).sum(axis=1, keepdims=True))
    out = s - lse
    soft = np.exp(out)

    def vjp(g):
        return (g - soft * g.sum(axis=1, keepdims=True),)

    return _node(out, (x,), vjp)


def logsumexp_rows(x, mask=None):
    """Row-wise log-sum-exp over entries where ``mask`` is True (all entries if None).

    Rows with no admitted entry are an error: the sum would be empty.
    """
    x = as_tensor(x)
    if mask is None:
        mask = np.ones(x.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"logsumexp_rows: mask {mask.shape} vs input {x.shape}")
    if not np.all(mask.any(axis=1)):
        raise ContractError("logsumexp_rows: a row has no admitted entries")
    masked = np.where(mask, x.data, -np.inf)
    top = masked.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(masked - top), 0.0)
    total = e.sum(axis=1, keepdims=True)
    out = top + np.log(total)
    weights = e / total

    def vjp(g):
        return (g * weights,)

    return _node(out, (x,), vjp)


def l2_normalize_rows(x, eps: float = 1e-12):
    x = as_tensor(x)
    raw = np.sqrt(np.sum(x.data * x.data, axis=1, keepdims=True))
    floored = raw < eps  # near-zero rows are scaled by 1/eps, not normalized
    norm = np.where(floored, eps, raw)
    out = x.data / norm

    def vjp(g):
        inner = np.where(floored, 0.0, np.sum(g * out, axis=1, keepdims=True))
        return ((g - out * inner) / norm,)

    return _node(out, (x,), vjp)


# reverse pass ----------------------------------------------------------------


@dataclass
class Tape:
    """Nodes reachable from ``output`` in topological order (parents first)."""

    nodes: list = field(default_factory=list)
    output: Tensor | None = None


def build_tape(loss: Tensor) -> Tape:
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return Tape(nodes=order, output=loss)


class Gradients(dict):
    """Mapping from leaf tensor to gradient array; unreached tensors map to zeros."""

    def __missing__(self, key):
        return np.zeros_like(key.data)


def backward(loss: Tensor, tape: Tape | None = None) -> Gradients:
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads = Gradients()
    if not loss.requires_grad:
        return grads
    tape = tape or build_tape(loss)
    pending = {id(loss): np.ones((1, 1))}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            grads[node] = g
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + pg
            else:
                pending[key] = pg
    return grads


# parameters and optimisation ---------------------------------------------------


def parameter(data, name=None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def xavier_init(rows: int, cols: int, seed=None, rng=None) -> np.ndarray:
    """Glorot-uniform samples in +-sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ContractError(f"xavier_init needs positive dims, got {rows}x{cols}")
    rng = rng if rng is not None else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass
class AdamState:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState):
    """Apply one bias-corrected Adam update in place; returns ``params``.

    Moments are keyed by parameter name, so every parameter needs a unique name.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        g = grads[p]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {p.name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
