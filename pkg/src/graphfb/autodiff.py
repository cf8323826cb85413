"""Minimal reverse-mode differentiation over dense float64 matrices.

The engine supports exactly the operations the models need: dense matmul,
constant-sparse times dense (spmm), addition, scaling by a learnable scalar,
relu, sigmoid, inverted dropout, and masked softmax cross-entropy. Tensors
are 2-D (scalars are 1x1); creation order doubles as a topological order of
the implicit tape, so backward walks node ids in reverse and visits each
node exactly once. Gradients accumulate across backward calls until
``zero_grad`` resets them.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

_NODE_IDS = itertools.count()


class Tensor:
    """A 2-D float64 value with an optional gradient slot."""

    __slots__ = ("values", "grad", "requires_grad", "node_id", "_parents", "_vjp")

    def __init__(self, values, requires_grad=False):
        arr = np.asarray(values, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        if arr.ndim != 2:
            raise ValueError(f"tensors are 2-D matrices, got shape {arr.shape}")
        self.values = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_NODE_IDS)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.values.shape

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def _node(values, parents, vjp) -> Tensor:
    out = Tensor(values, requires_grad=any(p.requires_grad for p in parents))
    if out.requires_grad:
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

    def vjp(g):
        return g @ b.values.T, a.values.T @ g

    return _node(a.values @ b.values, (a, b), vjp)


def spmm(op, x: Tensor) -> Tensor:
    """Multiply a constant sparse operator into a dense tensor.

    The sparse side never receives a gradient. Accepts a SparseOperator or a
    raw scipy sparse matrix.
    """
    mat = op.matrix if hasattr(op, "matrix") else op
    if not sp.issparse(mat):
        raise TypeError("spmm expects a sparse operator on the left")
    if mat.shape[1] != x.shape[0]:
        raise ValueError(f"spmm shape mismatch: {mat.shape} @ {x.shape}")

    def vjp(g):
        return (mat.T @ g,)

    return _node(mat @ x.values, (x,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def vjp(g):
        return g, g

    return _node(a.values + b.values, (a, b), vjp)


def scale_by_scalar(s: Tensor, x: Tensor) -> Tensor:
    """Scale a matrix by a learnable 1x1 scalar tensor."""
    if s.shape != (1, 1):
        raise ValueError(f"scale factor must be 1x1, got {s.shape}")
    c = s.values[0, 0]

    def vjp(g):
        return np.array([[np.sum(g * x.values)]]), c * g

    return _node(c * x.values, (s, x), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0  # derivative at 0 is defined as 0

    def vjp(g):
        return (g * mask,)

    return _node(np.maximum(x.values, 0.0), (x,), vjp)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.values))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _node(s, (x,), vjp)


def dropout(x: Tensor, p: float, train_mode: bool, rng=None) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale kept by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train_mode or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def vjp(g):
        return (g * keep,)

    return _node(x.values * keep, (x,), vjp)


def softmax_cross_entropy(logits: Tensor, labels, mask) -> Tensor:
    """Mean cross-entropy of softmax(logits) rows selected by `mask`.

    `labels` are integer class ids for all rows; `mask` is a boolean vector
    or an index array choosing the rows that bear loss. Rows outside the
    mask receive exactly zero gradient.
    """
    labels = np.asarray(labels, dtype=np.int64)
    mask = np.asarray(mask)
    rows = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if rows.size == 0:
        raise ValueError("empty loss mask")
    if labels.shape[0] != logits.shape[0]:
        raise ValueError("labels length must match logits rows")
    z = logits.values[rows]
    y = labels[rows]
    zmax = z.max(axis=1, keepdims=True)
    log_probs = z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
    loss = -log_probs[np.arange(rows.size), y].mean()

    def vjp(g):
        probs = np.exp(log_probs)
        probs[np.arange(rows.size), y] -= 1.0
        full = np.zeros_like(logits.values)
        full[rows] = probs * (g[0, 0] / rows.size)
        return (full,)

    return _node(np.array([[loss]]), (logits,), vjp)


def backward(loss: Tensor) -> None:
    """Populate .grad with d(loss)/d(tensor) for every requires_grad ancestor.

    Gradients accumulate: calling backward twice without zero_grad doubles
    them.
    """
    if loss.values.shape != (1, 1):
        raise ValueError(f"loss must be a scalar (1x1), got {loss.values.shape}")

    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.node_id in nodes:
            continue
        nodes[node.node_id] = node
        for p in node._parents:
            if p.requires_grad:
                stack.append(p)

    adjoint = {loss.node_id: np.ones((1, 1))}
    for node_id in sorted(nodes, reverse=True):
        node = nodes[node_id]
        g = adjoint.pop(node_id, None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._vjp is None:
            continue
        for parent, contrib in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            acc = adjoint.get(parent.node_id)
            adjoint[parent.node_id] = contrib if acc is None else acc + contrib


def zero_grad(tensors) -> None:
    """Reset gradients to exact zeros (allocating if never populated)."""
    for t in tensors:
        t.grad = np.zeros_like(t.values)


@dataclass
class GradCheckReport:
    max_rel_error: float
    tolerance: float
    per_param: list

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def grad_check(forward_fn, params, tolerance=1e-5, eps=1e-6,
               max_entries_per_param=64, rng=None) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    `forward_fn()` must rebuild the loss from the current parameter values
    and be deterministic (run dropout in eval mode). Large parameters are
    subsampled to at most `max_entries_per_param` entries.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    zero_grad(params)
    loss = forward_fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]

    per_param = []
    worst = 0.0
    for idx, p in enumerate(params):
        flat = p.values.reshape(-1)
        n_entries = flat.shape[0]
        if max_entries_per_param is not None and n_entries > max_entries_per_param:
            entries = rng.choice(n_entries, size=max_entries_per_param, replace=False)
        else:
            entries = np.arange(n_entries)
        a_flat = analytic[idx].reshape(-1)
        max_rel = 0.0
        for j in entries:
            orig = flat[j]
            flat[j] = orig + eps
            f_plus = forward_fn().values[0, 0]
            flat[j] = orig - eps
            f_minus = forward_fn().values[0, 0]
            flat[j] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(a_flat[j]), abs(numeric), 1e-3)
            max_rel = max(max_rel, abs(a_flat[j] - numeric) / denom)
        per_param.append({"param": idx, "size": n_entries, "max_rel_error": max_rel})
        worst = max(worst, max_rel)
    return GradCheckReport(max_rel_error=worst, tolerance=tolerance, per_param=per_param)
