"""Reverse-mode automatic differentiation over dense float64 arrays.

The engine is deliberately small: row-major numpy storage, a handful of ops
sufficient for encoder-decoder training, and no broadcasting beyond bias-add
and scalar scaling.  Gradients accumulate (``+=``) until explicitly zeroed.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A dense float64 array participating in a computation graph."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, requires_grad={self.requires_grad})"


def _node(values: np.ndarray, parents, backward) -> Tensor:
    """Create a graph node; constant results are pruned from the graph."""
    t = Tensor.__new__(Tensor)
    t.values = values
    t.grad = None
    if any(p.requires_grad for p in parents):
        t.requires_grad = True
        t._parents = tuple(parents)
        t._backward = backward
    else:
        t.requires_grad = False
        t._parents = ()
        t._backward = None
    return t


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss, accumulating into ``.grad``."""
    if loss.values.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    if loss.grad is None:
        loss.grad = np.zeros_like(loss.values)
    loss.grad += 1.0

    flowing = {id(loss): np.ones_like(loss.values)}
    for node in reversed(topo):
        g = flowing.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad or pg is None:
                continue
            if p._backward is None:
                # leaf: persistent accumulation
                if p.grad is None:
                    p.grad = np.zeros_like(p.values)
                p.grad += pg
            else:
                acc = flowing.get(id(p))
                if acc is None:
                    # copy: backward rules may hand the same array to two parents
                    flowing[id(p)] = np.array(pg)
                else:
                    acc += pg
                if p.grad is None:
                    p.grad = np.zeros_like(p.values)
                p.grad += pg


# ---------------------------------------------------------------------------
# ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Strict 2-D matrix product."""
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.values @ b.values

    def back(g):
        return g @ b.values.T, a.values.T @ g

    return _node(out, (a, b), back)


def bmm(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with identical leading dims."""
    if a.values.shape[:-2] != b.values.shape[:-2]:
        raise ValueError(f"bmm leading dims differ: {a.shape} vs {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"bmm inner extents differ: {a.shape} x {b.shape}")
    out = a.values @ b.values

    def back(g):
        return g @ np.swapaxes(b.values, -1, -2), np.swapaxes(a.values, -1, -2) @ g

    return _node(out, (a, b), back)


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(x.values.ndim)))
    inv = np.argsort(axes)
    out = np.transpose(x.values, axes)

    def back(g):
        return (np.transpose(g, inv),)

    return _node(out, (x,), back)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.values.reshape(shape)
    orig = x.values.shape

    def back(g):
        return (g.reshape(orig),)

    return _node(out, (x,), back)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"add shapes differ: {a.shape} vs {b.shape}")

    def back(g):
        return g, g

    return _node(a.values + b.values, (a, b), back)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a 1-D bias along the last dim."""
    if b.values.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"bias shape {b.shape} does not match input {x.shape}")
    lead = tuple(range(x.values.ndim - 1))

    def back(g):
        return g, g.sum(axis=lead) if lead else g

    return _node(x.values + b.values, (x, b), back)


def add_const(x: Tensor, c) -> Tensor:
    """Add a constant (no gradient flows into it); broadcast over ``x``."""
    out = x.values + np.asarray(c, dtype=np.float64)
    if out.shape != x.values.shape:
        raise ValueError("add_const may not change the shape of its input")

    def back(g):
        return (g,)

    return _node(out, (x,), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shapes differ: {a.shape} vs {b.shape}")

    def back(g):
        return g * b.values, g * a.values

    return _node(a.values * b.values, (a, b), back)


def scale(x: Tensor, s: float) -> Tensor:
    s = float(s)

    def back(g):
        return (g * s,)

    return _node(x.values * s, (x,), back)


def scale_by(x: Tensor, s: Tensor) -> Tensor:
    """Multiply by a scalar tensor (gradient flows into both)."""
    if s.values.size != 1:
        raise ValueError("scale_by expects a scalar tensor")
    sv = float(s.values)

    def back(g):
        return g * sv, np.asarray((g * x.values).sum()).reshape(s.values.shape)

    return _node(x.values * sv, (x, s), back)


def index(x: Tensor, i: int) -> Tensor:
    """Pick one entry of a 1-D tensor as a scalar tensor."""
    if x.values.ndim != 1:
        raise ValueError("index expects a 1-D tensor")
    out = np.asarray(x.values[i])

    def back(g):
        gx = np.zeros_like(x.values)
        gx[i] = g
        return (gx,)

    return _node(out, (x,), back)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0

    def back(g):
        return (g * mask,)

    return _node(x.values * mask, (x,), back)


def softmax_lastdim(x: Tensor) -> Tensor:
    """Numerically stabilized softmax along the last dim."""
    shifted = x.values - x.values.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _node(out, (x,), back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize over the last dim, then apply an affine gain and bias."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("layer_norm gain/bias must be 1-D of the feature size")
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.values.mean(axis=-1, keepdims=True)
    var = x.values.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mu) * inv_std
    out = xhat * gain.values + bias.values
    lead = tuple(range(x.values.ndim - 1))

    def back(g):
        dxhat = g * gain.values
        gx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).sum(axis=lead) if lead else g * xhat
        gbias = g.sum(axis=lead) if lead else g
        return gx, ggain, gbias

    return _node(out, (x, gain, bias), back)


def embedding(table: Tensor, ids) -> Tensor:
    """Row gather from an embedding table; scatter-add on backward."""
    ids = np.asarray(ids, dtype=np.int64)
    out = table.values[ids]

    def back(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (gt,)

    return _node(out, (table,), back)


def cross_entropy(logits: Tensor, targets, pad_id: int) -> Tensor:
    """Mean negative log-softmax over non-pad positions."""
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(
            f"targets shape {targets.shape} does not match logits {logits.shape}"
        )
    vocab = logits.shape[-1]
    flat = logits.values.reshape(-1, vocab)
    tgt = targets.reshape(-1)
    keep = tgt != pad_id
    n = int(keep.sum())
    if n == 0:
        raise ValueError("cross_entropy: every position is padding")
    bad = keep & ((tgt < 0) | (tgt >= vocab))
    if bad.any():
        raise ValueError("cross_entropy: target id out of range")

    shifted = flat - flat.max(axis=-1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=-1))
    rows = np.arange(flat.shape[0])
    safe_tgt = np.where(keep, tgt, 0)
    nll = (log_z - shifted[rows, safe_tgt]) * keep
    out = np.asarray(nll.sum() / n)

    def back(g):
        probs = np.exp(shifted - log_z[:, None])
        probs[rows, safe_tgt] -= 1.0
        probs *= (keep * float(g) / n)[:, None]
        return (probs.reshape(logits.shape),)

    return _node(out, (logits,), back)


def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.values.sum())

    def back(g):
        return (np.full_like(x.values, float(g)),)

    return _node(out, (x,), back)


def assert_finite(x: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x.values)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x
