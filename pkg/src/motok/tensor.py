"""Minimal dense-tensor reverse-mode autodiff.

Tensors wrap numpy arrays (float32 by default, float64 in check mode).
Ops are module-level functions; while a Tape is active they append nodes
to it, and `Tape.backward` replays the nodes in reverse creation order.
Every op output is checked for NaN/Inf.
"""

import math

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "Tape", "matmul", "add", "mul", "scale", "softmax",
    "cross_entropy", "layernorm", "gelu", "mean_pool", "segment_mean",
    "gather_rows", "dropout", "masked_attention", "gradcheck",
]

_active_tape = None


def _check_finite(arr, op_name):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values produced by {op_name}")


class Tensor:
    """A dense array node. Immutable data by convention; .grad is filled by backward."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered op record plus the parameter registry it trains.

    Single-owner: one thread builds graphs and steps the optimizer.
    Use as a context manager around each forward/backward pass; `reset`
    (or re-entering) drops recorded nodes but keeps registered parameters.
    """

    def __init__(self):
        self._nodes = []
        self.params = {}

    def parameter(self, name, data, dtype=np.float32):
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)
        self.params[name] = t
        return t

    def record(self, out, backward_fn):
        self._nodes.append((out, backward_fn))

    def backward(self, loss):
        if loss.data.size != 1:
            raise ValueError("backward expects a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def reset(self):
        self._nodes.clear()

    def __enter__(self):
        global _active_tape
        if _active_tape is not None:
            raise RuntimeError("a Tape is already active")
        self.reset()
        _active_tape = self
        return self

    def __exit__(self, *exc):
        global _active_tape
        _active_tape = None
        return False


def _binary_out(a, b, data, op_name):
    _check_finite(data, op_name)
    out = Tensor(data, requires_grad=a.requires_grad or b.requires_grad)
    return out


def _unary_out(a, data, op_name):
    _check_finite(data, op_name)
    return Tensor(data, requires_grad=a.requires_grad)


def _maybe_record(out, backward_fn):
    if _active_tape is not None and out.requires_grad:
        _active_tape.record(out, backward_fn)


def _unbroadcast(g, shape):
    """Sum g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = _binary_out(a, b, a.data @ b.data, "matmul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    _maybe_record(out, backward)
    return out


def add(a, b):
    out = _binary_out(a, b, a.data + b.data, "add")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g, b.data.shape))

    _maybe_record(out, backward)
    return out


def mul(a, b):
    out = _binary_out(a, b, a.data * b.data, "mul")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))

    _maybe_record(out, backward)
    return out


def scale(a, c):
    c = float(c)
    out = _unary_out(a, a.data * c, "scale")

    def backward(g):
        if a.requires_grad:
            a.accumulate_grad(g * c)

    _maybe_record(out, backward)
    return out


def softmax(x, axis=-1):
    """Row softmax, stabilized by max subtraction (shift-invariant)."""
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / np.sum(e, axis=axis, keepdims=True)
    out = _unary_out(x, s, "softmax")

    def backward(g):
        if x.requires_grad:
            dot = np.sum(g * s, axis=axis, keepdims=True)
            x.accumulate_grad(s * (g - dot))

    _maybe_record(out, backward)
    return out


def cross_entropy(logits, labels):
    """Mean negative log-softmax at the label index. labels: int array [B]."""
    labels = np.asarray(labels)
    b, c = logits.data.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("label index out of range")
    z = logits.data
    m = np.max(z, axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.sum(np.exp(z - m), axis=1))
    losses = lse - z[np.arange(b), labels]
    out = _unary_out(logits, np.asarray(losses.mean(), dtype=logits.dtype), "cross_entropy")

    def backward(g):
        if logits.requires_grad:
            p = np.exp(z - m)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(b), labels] -= 1.0
            logits.accumulate_grad(g * p / b)

    _maybe_record(out, backward)
    return out


def layernorm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.data.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = gamma.data * xhat + beta.data
    _check_finite(data, "layernorm")
    out = Tensor(data, requires_grad=x.requires_grad or gamma.requires_grad or beta.requires_grad)

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate_grad(_unbroadcast(g * xhat, gamma.data.shape))
        if beta.requires_grad:
            beta.accumulate_grad(_unbroadcast(g, beta.data.shape))
        if x.requires_grad:
            gx = g * gamma.data
            s1 = gx.sum(axis=-1, keepdims=True)
            s2 = (gx * xhat).sum(axis=-1, keepdims=True)
            x.accumulate_grad(inv * (gx - s1 / d - xhat * s2 / d))

    _maybe_record(out, backward)
    return out


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x):
    """tanh-approximation GELU."""
    z = x.data
    inner = _GELU_C * (z + 0.044715 * z ** 3)
    t = np.tanh(inner)
    out = _unary_out(x, 0.5 * z * (1.0 + t), "gelu")

    def backward(g):
        if x.requires_grad:
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * z ** 2)
            dx = 0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * dinner
            x.accumulate_grad(g * dx)

    _maybe_record(out, backward)
    return out


def mean_pool(x, axis=0):
    n = x.data.shape[axis]
    out = _unary_out(x, x.data.mean(axis=axis), "mean_pool")

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.expand_dims(g, axis).repeat(n, axis=axis) / n)

    _maybe_record(out, backward)
    return out


def segment_mean(x, lengths):
    """Mean over consecutive row segments of x [n, d] -> [len(lengths), d]."""
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.min() <= 0:
        raise ValueError("zero-length segment")
    if lengths.sum() != x.data.shape[0]:
        raise ValueError("segment lengths do not sum to row count")
    offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    sums = np.add.reduceat(x.data, offsets, axis=0)
    out = _unary_out(x, sums / lengths[:, None], "segment_mean")

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(np.repeat(g / lengths[:, None], lengths, axis=0))

    _maybe_record(out, backward)
    return out


def gather_rows(table, idx):
    """Row lookup with scatter-add gradient (embedding tables)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= table.data.shape[0]:
        raise IndexError("gather index out of range")
    out = _unary_out(table, table.data[idx], "gather_rows")

    def backward(g):
        if table.requires_grad:
            acc = np.zeros_like(table.data)
            np.add.at(acc, idx, g)
            table.accumulate_grad(acc)

    _maybe_record(out, backward)
    return out


def dropout(x, rate, rng):
    if rate <= 0.0:
        return x
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    inv = 1.0 / (1.0 - rate)
    out = _unary_out(x, x.data * keep * inv, "dropout")

    def backward(g):
        if x.requires_grad:
            x.accumulate_grad(g * keep * inv)

    _maybe_record(out, backward)
    return out


def masked_attention(q, k, v, lengths, n_heads):
    """Multi-head attention confined to consecutive row segments.

    q, k, v: [n, d] with d divisible by n_heads. Tokens attend only within
    their own segment; cross-segment weights are exactly zero (the weights
    are never computed), so packed batches cannot leak across videos.
    """
    n, d = q.data.shape
    if d % n_heads != 0:
        raise ValueError("model dim not divisible by head count")
    hd = d // n_heads
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.min() <= 0:
        raise ValueError("zero-length segment")
    if lengths.sum() != n:
        raise ValueError("segment lengths do not sum to row count")

    def split(t):
        # [n, d] -> [h, n, hd] contiguous
        return np.ascontiguousarray(t.reshape(n, n_heads, hd).transpose(1, 0, 2))

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scale_ = 1.0 / math.sqrt(hd)
    oh, probs = kernels.segment_attention_forward(qh, kh, vh, lengths, scale_)
    data = oh.transpose(1, 0, 2).reshape(n, d)
    _check_finite(data, "masked_attention")
    out = Tensor(data, requires_grad=q.requires_grad or k.requires_grad or v.requires_grad)

    def backward(g):
        gh = np.ascontiguousarray(g.reshape(n, n_heads, hd).transpose(1, 0, 2))
        dq, dk, dv = kernels.segment_attention_backward(gh, qh, kh, vh, probs, lengths, scale_)
        if q.requires_grad:
            q.accumulate_grad(dq.transpose(1, 0, 2).reshape(n, d))
        if k.requires_grad:
            k.accumulate_grad(dk.transpose(1, 0, 2).reshape(n, d))
        if v.requires_grad:
            v.accumulate_grad(dv.transpose(1, 0, 2).reshape(n, d))

    _maybe_record(out, backward)
    return out


def gradcheck(fn, params, eps=1e-6, rel_tol=1e-3):
    """Central finite-difference check of d(fn)/d(param) for float64 params.

    fn() must rebuild the graph from `params` (dict name -> Tensor) and
    return a scalar Tensor. Returns the worst relative error seen.
    """
    tape = Tape()
    tape.params = dict(params)
    with tape:
        loss = fn()
        tape.backward(loss)
    worst = 0.0
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ValueError("gradcheck expects float64 parameters")
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.ravel()
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            h = eps * max(1.0, abs(orig))
            flat[i] = orig + h
            lp = fn().item()
            flat[i] = orig - h
            lm = fn().item()
            flat[i] = orig
            num[i] = (lp - lm) / (2 * h)
        num = num.reshape(p.data.shape)
        denom = max(np.max(np.abs(analytic)), np.max(np.abs(num)), 1e-8)
        err = np.max(np.abs(analytic - num)) / denom
        worst = max(worst, err)
        if err > rel_tol:
            raise AssertionError(f"gradient check failed for {name}: rel err {err:.3e}")
    return worst
