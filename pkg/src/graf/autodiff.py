"""Small reverse-mode differentiation engine.

Only the operators needed by the attention model and the GCN are provided.
Every operator records itself on the active :class:`Tape`; calling
:meth:`Tape.backward` walks the records in reverse and accumulates gradients
into the tensors that were created with ``tracked=True``.

Example::

    w = Tensor(np.ones((3, 2)), tracked=True)
    with Tape() as tape:
        loss = total(matmul(x, w))
    tape.backward(loss)
    w.grad  # d loss / d w
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "Tensor",
    "Tape",
    "EdgeList",
    "Adam",
    "matmul",
    "add",
    "mul",
    "total",
    "mean",
    "gather",
    "columns",
    "ravel",
    "leaky_relu",
    "relu",
    "tanh",
    "elu",
    "segment_softmax",
    "sparse_aggregate",
    "concat_last_axis",
    "dropout",
    "cross_entropy",
    "backward",
    "glorot_uniform",
]

_state = threading.local()


def _active_tape() -> Optional["Tape"]:
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array that can take part in gradient recording."""

    __slots__ = ("values", "grad", "tracked", "tape", "name")

    def __init__(self, values, tracked: bool = False, name: str | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.tracked = tracked
        self.tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, tracked={self.tracked})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def zero_grad(self) -> None:
        self.grad = None


@dataclass
class _Record:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


@dataclass
class Tape:
    """Ordered log of operations; use as a context manager while building the loss."""

    records: list = field(default_factory=list)

    def __enter__(self) -> "Tape":
        if not hasattr(_state, "stack"):
            _state.stack = []
        _state.stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _state.stack.pop()

    def backward(self, loss: Tensor) -> None:
        if loss.values.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.values)}
        leaves: dict[int, Tensor] = {}
        for rec in reversed(self.records):
            for t in rec.inputs:
                if t.tracked and t.tape is None:
                    leaves[id(t)] = t
            g_out = grads.pop(id(rec.output), None)
            if g_out is None:
                continue
            for t, g in zip(rec.inputs, rec.backward(g_out)):
                if g is None or not _needs_grad(t):
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                if t.tape is None:
                    leaves[key] = t
        for key, t in leaves.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(t.values)
            t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    if loss.tape is None:
        raise ValueError("loss is not on a tape")
    loss.tape.backward(loss)


def _needs_grad(t: Tensor) -> bool:
    return t.tracked


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op: str, inputs: Sequence[Tensor], out_values: np.ndarray, grad_fn) -> Tensor:
    out = Tensor(out_values)
    tape = _active_tape()
    if tape is not None and any(t.tracked for t in inputs):
        for t in inputs:
            if t.tape is not None and t.tape is not tape:
                raise ValueError(f"{op}: input recorded on a different tape")
        out.tracked = True
        out.tape = tape
        tape.records.append(_Record(op, tuple(inputs), out, grad_fn))
    return out


# -- linear algebra ---------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def grad_fn(g):
        return g @ bv.T, av.T @ g

    return _record("matmul", (a, b), av @ bv, grad_fn)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.sum(g).reshape(shape) if int(np.prod(shape)) == 1 else g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.values.size != 1 and b.values.size != 1:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape

    def grad_fn(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _record("add", (a, b), a.values + b.values, grad_fn)


def mul(a, b) -> Tensor:
    """Elementwise product; one side may be a single-element tensor."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.values, b.values

    def grad_fn(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _record("mul", (a, b), av * bv, grad_fn)


def total(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _record("total", (x,), np.sum(x.values), lambda g: (np.full(shape, float(g)),))


def mean(x) -> Tensor:
    x = _as_tensor(x)
    shape, size = x.shape, x.values.size
    return _record("mean", (x,), np.mean(x.values), lambda g: (np.full(shape, float(g) / size),))


def gather(x, index) -> Tensor:
    """Rows of ``x`` selected by ``index`` (repeats allowed)."""
    x = _as_tensor(x)
    index = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if index.size and (index.min() < 0 or index.max() >= n):
        raise IndexError(f"gather index out of range for {n} rows")

    def grad_fn(g):
        if g.ndim == 1:
            return (np.bincount(index, weights=g, minlength=n),)
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _record("gather", (x,), x.values[index], grad_fn)


def columns(x, start: int, stop: int) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape

    def grad_fn(g):
        out = np.zeros(shape)
        out[:, start:stop] = g
        return (out,)

    return _record("columns", (x,), x.values[:, start:stop], grad_fn)


def ravel(x) -> Tensor:
    x = _as_tensor(x)
    shape = x.shape
    return _record("ravel", (x,), x.values.ravel(), lambda g: (g.reshape(shape),))


# -- elementwise nonlinearities ---------------------------------------------


def leaky_relu(x, slope: float = 0.2) -> Tensor:
    x = _as_tensor(x)
    pos = x.values >= 0
    return _record(
        "leaky_relu",
        (x,),
        np.where(pos, x.values, slope * x.values),
        lambda g: (np.where(pos, g, slope * g),),
    )


def relu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.values > 0
    return _record("relu", (x,), np.where(pos, x.values, 0.0), lambda g: (g * pos,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    y = np.tanh(x.values)
    return _record("tanh", (x,), y, lambda g: (g * (1.0 - y * y),))


def elu(x) -> Tensor:
    x = _as_tensor(x)
    pos = x.values > 0
    neg = np.expm1(np.minimum(x.values, 0.0))
    y = np.where(pos, x.values, neg)
    return _record("elu", (x,), y, lambda g: (np.where(pos, g, g * (neg + 1.0)),))


# -- graph kernels ----------------------------------------------------------


@dataclass(frozen=True)
class EdgeList:
    """Directed arcs ``rows[e] -> cols[e]`` over ``n`` nodes, sorted by row.

    For an arc (i, j), node ``i`` aggregates from neighbour ``j``.
    """

    rows: np.ndarray
    cols: np.ndarray
    n: int

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int64)
        cols = np.asarray(self.cols, dtype=np.int64)
        if rows.shape != cols.shape or rows.ndim != 1:
            raise ValueError("rows and cols must be 1-d arrays of equal length")
        if rows.size and (min(rows.min(), cols.min()) < 0 or max(rows.max(), cols.max()) >= self.n):
            raise IndexError(f"edge endpoint out of range for {self.n} nodes")
        order = np.lexsort((cols, rows))
        if not np.array_equal(order, np.arange(rows.size)):
            rows, cols = rows[order], cols[order]
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)

    @property
    def num_edges(self) -> int:
        return int(self.rows.size)

    @property
    def indptr(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(np.bincount(self.rows, minlength=self.n))))

    def matrix(self, weights) -> sp.csr_matrix:
        return sp.csr_matrix((np.asarray(weights, dtype=np.float64), self.cols, self.indptr), shape=(self.n, self.n))


def segment_softmax(scores, segment) -> Tensor:
    """Softmax of ``scores`` within groups sharing the same ``segment`` id."""
    scores = _as_tensor(scores)
    segment = np.asarray(segment, dtype=np.int64)
    s = scores.values
    if s.ndim != 1 or segment.shape != s.shape:
        raise ValueError("segment_softmax expects 1-d scores with one segment id each")
    if s.size == 0:
        return _record("segment_softmax", (scores,), s.copy(), lambda g: (g,))
    if not np.all(np.isfinite(s)):
        raise ValueError("segment_softmax got non-finite scores")
    n_seg = int(segment.max()) + 1
    if np.all(segment[1:] >= segment[:-1]):
        starts = np.flatnonzero(np.r_[True, segment[1:] != segment[:-1]])
        seg_max = np.empty(n_seg)
        seg_max[segment[starts]] = np.maximum.reduceat(s, starts)
    else:
        seg_max = np.full(n_seg, -np.inf)
        np.maximum.at(seg_max, segment, s)
    ex = np.exp(s - seg_max[segment])
    y = ex / np.bincount(segment, weights=ex, minlength=n_seg)[segment]

    def grad_fn(g):
        dot = np.bincount(segment, weights=g * y, minlength=n_seg)
        return (y * (g - dot[segment]),)

    return _record("segment_softmax", (scores,), y, grad_fn)


def sparse_aggregate(edges: EdgeList, weights, x) -> Tensor:
    """``out[i] = sum_j w(i, j) * x[j]`` over the arcs of ``edges``.

    ``weights`` may be a tracked tensor (one value per arc) or a plain array.
    """
    w = _as_tensor(weights)
    x = _as_tensor(x)
    if w.values.shape != (edges.num_edges,):
        raise ValueError(f"expected {edges.num_edges} edge weights, got shape {w.shape}")
    if x.values.ndim != 2 or x.shape[0] != edges.n:
        raise ValueError(f"sparse_aggregate: features of shape {x.shape} for {edges.n} nodes")
    if not np.all(np.isfinite(w.values)):
        raise ValueError("sparse_aggregate got non-finite edge weights")
    a = edges.matrix(w.values)
    xv = x.values
    w_tracked = w.tracked

    def grad_fn(g):
        gx = a.T @ g
        gw = np.einsum("ed,ed->e", g[edges.rows], xv[edges.cols]) if w_tracked else None
        return gw, gx

    return _record("sparse_aggregate", (w, x), a @ xv, grad_fn)


def concat_last_axis(parts: Sequence) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    if not parts:
        raise ValueError("concat_last_axis needs at least one part")
    lead = parts[0].shape[:-1]
    for p in parts:
        if p.shape[:-1] != lead:
            raise ValueError(f"concat_last_axis: leading shapes differ ({lead} vs {p.shape[:-1]})")
    bounds = np.cumsum([0] + [p.shape[-1] for p in parts])

    def grad_fn(g):
        return tuple(g[..., bounds[k]:bounds[k + 1]] for k in range(len(parts)))

    return _record("concat", tuple(parts), np.concatenate([p.values for p in parts], axis=-1), grad_fn)


# -- training helpers -------------------------------------------------------


def dropout(x, rate: float, training: bool, rng: np.random.Generator | int | None = None) -> Tensor:
    """Inverted dropout; identity when ``training`` is false or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    rng = np.random.default_rng(rng)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _record("dropout", (x,), x.values * mask, lambda g: (g * mask,))


def cross_entropy(logits, labels, mask=None) -> Tensor:
    """Mean negative log-softmax probability of ``labels`` over the rows in ``mask``."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.values
    n, c = z.shape
    rows = np.arange(n) if mask is None else np.asarray(mask)
    if rows.dtype == bool:
        rows = np.flatnonzero(rows)
    if rows.size == 0:
        raise ValueError("cross_entropy: empty mask")
    y = labels[rows]
    if y.min() < 0 or y.max() >= c:
        raise ValueError(f"cross_entropy: labels must lie in [0, {c})")
    zr = z[rows]
    shifted = zr - zr.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    logp = shifted - log_norm[:, None]
    loss = -np.mean(logp[np.arange(rows.size), y])

    def grad_fn(g):
        p = np.exp(logp)
        p[np.arange(rows.size), y] -= 1.0
        out = np.zeros_like(z)
        np.add.at(out, rows, p * (float(g) / rows.size))
        return (out,)

    return _record("cross_entropy", (logits,), np.float64(loss), grad_fn)


def glorot_uniform(shape: tuple, rng: np.random.Generator, name: str | None = None) -> Tensor:
    fan_in, fan_out = shape[0], shape[-1] if len(shape) > 1 else 1
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), tracked=True, name=name)


class Adam:
    """Adam with bias correction. ``step`` consumes and clears the gradients."""

    def __init__(self, params: Sequence[Tensor], lr: float = 0.005,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise RuntimeError(f"no gradient for parameter {p!r}; call backward first")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.values -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None
