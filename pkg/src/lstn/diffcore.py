"""Minimal reverse-mode autodiff over numpy arrays.

A :class:`Node` wraps a float64 array and remembers how to push gradients to
its parents.  Graphs are built by the op functions below and collapsed with
``node.backward()``.  Parameter leaves flush their gradient into the owning
:class:`ParamStore`, which also holds the Adam state.

The only fused op is :func:`lstm_sequence`, which runs a whole recurrence
through the kernel backend in one call; everything else is a thin numpy
composite.  Wrap read-only phases in :func:`no_grad` to skip graph recording.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import NonFiniteGradientError, ShapeError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Node:
    """Value plus backward rule; ``grad`` is allocated lazily."""

    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def backward(self, seed=None):
        """Run reverse-mode accumulation from this node.

        ``seed`` defaults to ones (the usual case is a scalar objective).
        """
        topo: list[Node] = []
        seen: set[int] = set()
        stack: list[tuple[Node, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value) if seed is None else seed)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def _make(value, parents, backward):
    if not _GRAD_ENABLED:
        return Node(value)
    return Node(value, tuple(parents), backward)


def constant(value) -> Node:
    return Node(value)


# ---------------------------------------------------------------------------
# elementwise and shape ops


def add(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add: {a.value.shape} vs {b.value.shape}")

    def bwd(g):
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.value + b.value, (a, b), bwd)


def add_rowvec(mat: Node, vec: Node) -> Node:
    """Broadcast-add a length-C vector to every row of an (R, C) matrix."""
    if mat.value.shape[-1] != vec.value.shape[-1] or vec.value.ndim != 1:
        raise ShapeError(f"add_rowvec: {mat.value.shape} vs {vec.value.shape}")

    def bwd(g):
        mat._accumulate(g)
        vec._accumulate(g.sum(axis=0))

    return _make(mat.value + vec.value, (mat, vec), bwd)


def mul(a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul: {a.value.shape} vs {b.value.shape}")

    def bwd(g):
        a._accumulate(g * b.value)
        b._accumulate(g * a.value)

    return _make(a.value * b.value, (a, b), bwd)


def mul_const(a: Node, c) -> Node:
    c = np.asarray(c, dtype=np.float64)

    def bwd(g):
        a._accumulate(g * c)

    return _make(a.value * c, (a,), bwd)


def scale(a: Node, s: float) -> Node:
    def bwd(g):
        a._accumulate(g * s)

    return _make(a.value * s, (a,), bwd)


def sigmoid(a: Node) -> Node:
    out = 1.0 / (1.0 + np.exp(-a.value))

    def bwd(g):
        a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), bwd)


def tanh(a: Node) -> Node:
    out = np.tanh(a.value)

    def bwd(g):
        a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), bwd)


def reshape(a: Node, shape) -> Node:
    def bwd(g):
        a._accumulate(g.reshape(a.value.shape))

    return _make(a.value.reshape(shape), (a,), bwd)


def concat_cols(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[0] != b.value.shape[0]:
        raise ShapeError(f"concat_cols: {a.value.shape} vs {b.value.shape}")
    ca = a.value.shape[1]

    def bwd(g):
        a._accumulate(g[:, :ca])
        b._accumulate(g[:, ca:])

    return _make(np.concatenate([a.value, b.value], axis=1), (a, b), bwd)


def slice_cols(a: Node, j0: int, j1: int) -> Node:
    def bwd(g):
        full = np.zeros_like(a.value)
        full[:, j0:j1] = g
        a._accumulate(full)

    return _make(a.value[:, j0:j1].copy(), (a,), bwd)


def slice_rows(a: Node, i0: int, i1: int) -> Node:
    def bwd(g):
        full = np.zeros_like(a.value)
        full[i0:i1] = g
        a._accumulate(full)

    return _make(a.value[i0:i1].copy(), (a,), bwd)


def index_axis0(a: Node, i: int) -> Node:
    def bwd(g):
        full = np.zeros_like(a.value)
        full[i] = g
        a._accumulate(full)

    return _make(a.value[i].copy(), (a,), bwd)


def broadcast_rows(vec: Node, n_rows: int) -> Node:
    if vec.value.ndim != 1:
        raise ShapeError(f"broadcast_rows expects a vector, got {vec.value.shape}")

    def bwd(g):
        vec._accumulate(g.sum(axis=0))

    return _make(np.tile(vec.value, (n_rows, 1)), (vec,), bwd)


# ---------------------------------------------------------------------------
# reductions and linear algebra


def matmul(a: Node, b: Node) -> Node:
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul: {a.value.shape} @ {b.value.shape}")

    def bwd(g):
        a._accumulate(g @ b.value.T)
        b._accumulate(a.value.T @ g)

    return _make(a.value @ b.value, (a, b), bwd)


def row_sum(mat: Node) -> Node:
    def bwd(g):
        mat._accumulate(np.repeat(g[:, None], mat.value.shape[1], axis=1))

    return _make(mat.value.sum(axis=1), (mat,), bwd)


def sum_axis0(mat: Node) -> Node:
    def bwd(g):
        mat._accumulate(np.broadcast_to(g, mat.value.shape).copy())

    return _make(mat.value.sum(axis=0), (mat,), bwd)


def sum_all(a: Node) -> Node:
    def bwd(g):
        a._accumulate(np.full_like(a.value, float(g)))

    return _make(a.value.sum(), (a,), bwd)


def dot_const(vec: Node, c) -> Node:
    """Weighted sum of a vector node with constant weights (no grad into c)."""
    c = np.asarray(c, dtype=np.float64)

    def bwd(g):
        vec._accumulate(float(g) * c)

    return _make(float(vec.value @ c), (vec,), bwd)


def gather_cols(mat: Node, idx) -> Node:
    """out[r] = mat[r, idx[r]]."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(mat.value.shape[0])

    def bwd(g):
        full = np.zeros_like(mat.value)
        full[rows, idx] = g
        mat._accumulate(full)

    return _make(mat.value[rows, idx].copy(), (mat,), bwd)


def log_softmax_rows(mat: Node) -> Node:
    """Row-wise log-softmax with max subtraction; rows exp-sum to 1."""
    if mat.value.ndim != 2:
        raise ShapeError(f"log_softmax_rows expects 2-D, got {mat.value.shape}")
    m = mat.value.max(axis=1, keepdims=True)
    shifted = mat.value - m
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True)) + m
    out = mat.value - lse

    def bwd(g):
        soft = np.exp(out)
        mat._accumulate(g - soft * g.sum(axis=1, keepdims=True))

    return _make(out, (mat,), bwd)


def log_softmax(logits: Node) -> Node:
    """1-D convenience wrapper around :func:`log_softmax_rows`."""
    if logits.value.ndim != 1 or logits.value.size == 0:
        raise ValueError("log_softmax expects a non-empty 1-D vector")
    return reshape(log_softmax_rows(reshape(logits, (1, -1))), (-1,))


def logsumexp(x, axis=None):
    """Non-differentiable log-sum-exp for the DP code paths."""
    x = np.asarray(x, dtype=np.float64)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):  # all -inf rows legitimately log(0)
        out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return out.item()
    return np.squeeze(out, axis=axis)


# ---------------------------------------------------------------------------
# parameters


def _uniform_init(rng: np.random.Generator, shape, scale_=0.08):
    return rng.uniform(-scale_, scale_, size=shape)


class ParamStore:
    """Named float64 parameter arrays with Adam moments and a step counter."""

    def __init__(self):
        self.arrays: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.adam_m: dict[str, np.ndarray] = {}
        self.adam_v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, shape, rng: np.random.Generator | None = None,
            init: np.ndarray | None = None):
        if name in self.arrays:
            raise ValueError(f"parameter {name!r} already exists")
        if init is not None:
            arr = np.array(init, dtype=np.float64).reshape(shape)
        elif rng is not None:
            arr = _uniform_init(rng, shape)
        else:
            arr = np.zeros(shape)
        self.arrays[name] = arr
        self.grads[name] = np.zeros(shape)
        self.adam_m[name] = np.zeros(shape)
        self.adam_v[name] = np.zeros(shape)

    def __contains__(self, name):
        return name in self.arrays

    def names(self):
        return list(self.arrays)

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def param(self, name: str) -> Node:
        """Leaf node whose backward flushes into this store's grad buffer."""
        arr = self.arrays[name]
        grads = self.grads

        def bwd(g):
            grads[name] += g

        return _make(arr, (), bwd)

    def embedding_rows(self, name: str, ids) -> Node:
        """Differentiable row gather; backward scatter-adds into the table."""
        ids = np.asarray(ids, dtype=np.intp)
        table = self.arrays[name]
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise IndexError(f"embedding index out of range for {name!r}")
        grads = self.grads

        def bwd(g):
            np.add.at(grads[name], ids, g)

        return _make(table[ids], (), bwd)

    def copy_values(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.arrays.items()}

    def load_values(self, values: dict[str, np.ndarray]):
        for k, v in values.items():
            self.arrays[k][...] = v


def embedding_lookup(store: ParamStore, name: str, index: int) -> Node:
    """Single differentiable row of a parameter table."""
    table = store.arrays[name]
    if not 0 <= index < table.shape[0]:
        raise IndexError(f"row {index} out of range for {name!r} with {table.shape[0]} rows")
    return reshape(store.embedding_rows(name, [index]), (-1,))


def affine(x: Node, weight: str, bias: str, store: ParamStore) -> Node:
    """W @ x + b for a 1-D x, with W stored as (out, in)."""
    W = store.param(weight)
    b = store.param(bias)
    if x.value.ndim != 1 or W.value.shape[1] != x.value.shape[0]:
        raise ShapeError(f"affine: W {W.value.shape} with x {x.value.shape}")
    return reshape(add_rowvec(matmul(reshape(x, (1, -1)), transpose(W)), b), (-1,))


def transpose(a: Node) -> Node:
    def bwd(g):
        a._accumulate(g.T)

    return _make(a.value.T.copy(), (a,), bwd)


# ---------------------------------------------------------------------------
# recurrent ops


class RecurrentState:
    """Hidden and cell state pair for explicit single-step chaining."""

    __slots__ = ("h", "c")

    def __init__(self, h: Node, c: Node):
        self.h = h
        self.c = c


def recurrent_step(prev: RecurrentState | None, x_emb: Node, store: ParamStore,
                   cell: str) -> RecurrentState:
    """One LSTM step from composite ops; inputs are (B, E), states (B, H).

    ``prev=None`` starts from zero states.  The fused :func:`lstm_sequence`
    is the fast path for whole sequences; this exists for chaining with
    gradient flow through both h and c.
    """
    Wx = store.param(f"{cell}.Wx")
    Wh = store.param(f"{cell}.Wh")
    b = store.param(f"{cell}.b")
    if x_emb.value.ndim != 2 or x_emb.value.shape[1] != Wx.value.shape[0]:
        raise ShapeError(f"recurrent_step: x {x_emb.value.shape} vs Wx {Wx.value.shape}")
    B = x_emb.value.shape[0]
    H = Wh.value.shape[0]
    if prev is None:
        prev = RecurrentState(constant(np.zeros((B, H))), constant(np.zeros((B, H))))
    if prev.h.value.shape != (B, H):
        raise ShapeError(f"recurrent_step: state {prev.h.value.shape}, expected {(B, H)}")
    z = add_rowvec(add(matmul(x_emb, Wx), matmul(prev.h, Wh)), b)
    i = sigmoid(slice_cols(z, 0, H))
    f = sigmoid(slice_cols(z, H, 2 * H))
    g = tanh(slice_cols(z, 2 * H, 3 * H))
    o = sigmoid(slice_cols(z, 3 * H, 4 * H))
    c = add(mul(f, prev.c), mul(i, g))
    h = mul(o, tanh(c))
    return RecurrentState(h, c)


def lstm_sequence(xproj: Node, h0: Node, store: ParamStore, cell: str) -> Node:
    """Fused LSTM recurrence over T steps via the kernel backend.

    ``xproj`` is the precomputed input projection (T, 4H) shared across the
    batch rows of ``h0`` (B, H); the cell starts from zero cell state.
    Returns the stacked hidden states (T, B, H).
    """
    Wh = store.param(f"{cell}.Wh")
    b = store.param(f"{cell}.b")
    B = h0.value.shape[0]
    H = Wh.value.shape[0]
    if xproj.value.shape[1] != 4 * H or h0.value.shape[1] != H:
        raise ShapeError(f"lstm_sequence: xproj {xproj.value.shape}, h0 {h0.value.shape}")
    c0 = np.zeros((B, H))
    hs, cs, gates = kernels.lstm_seq_forward(
        np.ascontiguousarray(xproj.value), np.ascontiguousarray(h0.value), c0,
        Wh.value, b.value)

    if not _GRAD_ENABLED:
        return Node(hs)

    def bwd(g):
        dxproj, dh0, _dc0, dWh = kernels.lstm_seq_backward(
            np.ascontiguousarray(g), np.zeros((B, H)),
            np.ascontiguousarray(h0.value), c0, Wh.value, hs, cs, gates)
        xproj._accumulate(dxproj)
        h0._accumulate(dh0)
        Wh._accumulate(dWh)
        b._accumulate(dxproj.sum(axis=0))

    return _make(hs, (xproj, h0, Wh, b), bwd)


def add_lstm_cell(store: ParamStore, cell: str, in_dim: int, hidden_dim: int,
                  rng: np.random.Generator):
    store.add(f"{cell}.Wx", (in_dim, 4 * hidden_dim), rng=rng)
    store.add(f"{cell}.Wh", (hidden_dim, 4 * hidden_dim), rng=rng)
    store.add(f"{cell}.b", (4 * hidden_dim,), rng=rng)


# ---------------------------------------------------------------------------
# optimization and verification


def adam_update(store: ParamStore, learning_rate: float, beta1: float = 0.9,
                beta2: float = 0.999, eps: float = 1e-8,
                params: Iterable[str] | None = None):
    """Bias-corrected Adam step; zeroes the touched gradients afterwards."""
    names = list(params) if params is not None else store.names()
    for name in names:
        if not np.all(np.isfinite(store.grads[name])):
            raise NonFiniteGradientError(name)
    store.step += 1
    t = store.step
    for name in names:
        g = store.grads[name]
        m = store.adam_m[name]
        v = store.adam_v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        store.arrays[name] -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        g[...] = 0.0


def grad_check(fn: Callable[[], Node], store: ParamStore, eps: float = 1e-5,
               params: Sequence[str] | None = None, max_coords: int = 8,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the scalar objective from the store's current values
    on every call.  A subset of coordinates per parameter is sampled when the
    parameter is larger than ``max_coords``.
    """
    rng = rng or np.random.default_rng(0)
    names = list(params) if params is not None else store.names()
    store.zero_grads()
    out = fn()
    out.backward()
    analytic = {n: store.grads[n].copy() for n in names}
    store.zero_grads()

    worst = 0.0
    for name in names:
        arr = store.arrays[name]
        flat = arr.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + eps
            with no_grad():
                f_plus = float(fn().value)
            flat[idx] = orig - eps
            with no_grad():
                f_minus = float(fn().value)
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = analytic[name].reshape(-1)[idx]
            rel = abs(a - numeric) / max(1.0, abs(a))
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# checkpoints


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def save_checkpoint(store: ParamStore, path, meta: dict | None = None):
    """Bit-exact named-array container with Adam state and metadata."""
    payload = {}
    for name, arr in store.arrays.items():
        payload[f"param::{name}"] = arr
        payload[f"adam_m::{name}"] = store.adam_m[name]
        payload[f"adam_v::{name}"] = store.adam_v[name]
    header = {"step": store.step, "names": store.names(), "meta": meta or {}}
    payload["__header__"] = np.frombuffer(
        json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **payload)


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    with np.load(path) as data:
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        store = ParamStore()
        for name in header["names"]:
            arr = data[f"param::{name}"]
            store.add(name, arr.shape, init=arr)
            store.adam_m[name][...] = data[f"adam_m::{name}"]
            store.adam_v[name][...] = data[f"adam_v::{name}"]
        store.step = header["step"]
    return store, header["meta"]
