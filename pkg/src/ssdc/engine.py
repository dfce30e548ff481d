"""Minimal dense-tensor engine with reverse-mode differentiation.

Values are float64 numpy arrays wrapped in :class:`Tensor`. Differentiable
work happens inside a :class:`Tape` context: every primitive executed while
a tape is active appends one record (output, inputs, per-input vjp
closures), and ``tape.backward(loss)`` replays the records once, in reverse
order, accumulating gradients additively into the participating tensors.

Broadcasting is deliberately narrow: an operand may be a trailing suffix of
the other shape (bias against leading batch axes), or the two shapes may
have equal rank with size-1 axes on one side (keepdims statistics). Any
other mismatch raises, with both shapes in the message.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np

_state = threading.local()


def _tape_stack():
    if not hasattr(_state, "stack"):
        _state.stack = []
    return _state.stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense float64 value with an optional gradient."""

    __slots__ = ("data", "requires_grad", "grad", "_track")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._track = self.requires_grad

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars and arrays are wrapped as constants
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


class Tape:
    """Ordered record of primitive ops; single-owner, not thread-shared."""

    def __init__(self):
        self._records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._records)

    def backward(self, loss: Tensor):
        """Accumulate d(loss)/d(leaf) into .grad of every tracked tensor."""
        if loss.data.ndim != 0:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        loss.grad = np.array(1.0)
        for out, inputs, vjps in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for inp, vjp in zip(inputs, vjps):
                if vjp is None or not inp._track:
                    continue
                contrib = vjp(g)
                # grads are never mutated in place, so views are safe to hold
                inp.grad = contrib if inp.grad is None else inp.grad + contrib


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_op(value: np.ndarray, inputs, vjps) -> Tensor:
    """Register a primitive result on the active tape.

    ``vjps[i]`` maps the output gradient to the gradient w.r.t.
    ``inputs[i]`` (None for non-differentiable arguments). Recording only
    happens when a tape is active and some input is tracked.
    """
    out = Tensor(value)
    tape = _active_tape()
    if tape is not None and any(i._track for i in inputs):
        out._track = True
        tape._records.append((out, tuple(inputs), tuple(vjps)))
    return out


# ---------------------------------------------------------------------------
# broadcasting helpers

def _broadcast_ok(sa, sb):
    if sa == sb:
        return True
    if len(sa) != len(sb):
        shorter, longer = (sa, sb) if len(sa) < len(sb) else (sb, sa)
        return longer[len(longer) - len(shorter):] == shorter
    return all(a == b or a == 1 or b == 1 for a, b in zip(sa, sb))


def _check_binary(a, b, opname):
    if not _broadcast_ok(a.data.shape, b.data.shape):
        raise ValueError(f"{opname}: incompatible shapes {a.data.shape} and {b.data.shape}")


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "add")
    return make_op(
        a.data + b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(g, b.data.shape)),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "sub")
    return make_op(
        a.data - b.data,
        (a, b),
        (lambda g: _unbroadcast(g, a.data.shape), lambda g: _unbroadcast(-g, b.data.shape)),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "mul")
    ad, bd = a.data, b.data
    return make_op(
        ad * bd,
        (a, b),
        (lambda g: _unbroadcast(g * bd, ad.shape), lambda g: _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_binary(a, b, "div")
    ad, bd = a.data, b.data
    return make_op(
        ad / bd,
        (a, b),
        (
            lambda g: _unbroadcast(g / bd, ad.shape),
            lambda g: _unbroadcast(-g * ad / (bd * bd), bd.shape),
        ),
    )


def neg(a):
    a = as_tensor(a)
    return make_op(-a.data, (a,), (lambda g: -g,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return make_op(ad @ bd, (a, b), (lambda g: g @ bd.T, lambda g: ad.T @ g))


def bmm(a, b):
    """Batched matmul: (B,n,m) @ (B,m,p) -> (B,n,p)."""
    a, b = as_tensor(a), as_tensor(b)
    if (
        a.data.ndim != 3
        or b.data.ndim != 3
        or a.data.shape[0] != b.data.shape[0]
        or a.data.shape[2] != b.data.shape[1]
    ):
        raise ValueError(f"bmm: incompatible shapes {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return make_op(
        ad @ bd,
        (a, b),
        (lambda g: g @ bd.transpose(0, 2, 1), lambda g: ad.transpose(0, 2, 1) @ g),
    )


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_op(a.data.transpose(axes), (a,), (lambda g: g.transpose(inv),))


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape
    return make_op(a.data.reshape(shape), (a,), (lambda g: g.reshape(old),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp_for(i):
        return lambda g: np.split(g, splits, axis=axis)[i]

    return make_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        tuple(vjp_for(i) for i in range(len(tensors))),
    )


def slice_(a, key):
    a = as_tensor(a)
    val = a.data[key]
    if np.isscalar(val) or val.ndim == 0:
        val = np.asarray(val, dtype=np.float64)
    shape = a.data.shape

    def vjp(g):
        out = np.zeros(shape)
        out[key] = g
        return out

    return make_op(val, (a,), (vjp,))


def exp(a):
    a = as_tensor(a)
    ev = np.exp(a.data)
    return make_op(ev, (a,), (lambda g: g * ev,))


def log(a):
    a = as_tensor(a)
    ad = a.data
    return make_op(np.log(ad), (a,), (lambda g: g / ad,))


def log1p(a):
    a = as_tensor(a)
    ad = a.data
    return make_op(np.log1p(ad), (a,), (lambda g: g / (1.0 + ad),))


def sqrt(a):
    a = as_tensor(a)
    sv = np.sqrt(a.data)
    return make_op(sv, (a,), (lambda g: g * 0.5 / sv,))


def pow_const(a, p):
    """Elementwise power with a constant exponent (integer, or positive base)."""
    a = as_tensor(a)
    ad = a.data
    if not float(p).is_integer() and np.any(ad < 0):
        raise ValueError("pow_const: fractional exponent needs a non-negative base")
    return make_op(np.power(ad, p), (a,), (lambda g: g * p * np.power(ad, p - 1),))


def sigmoid(a):
    a = as_tensor(a)
    ad = a.data
    # split by sign to stay stable for large |x|
    sv = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.abs(ad))), np.exp(-np.abs(ad)) / (1.0 + np.exp(-np.abs(ad))))
    return make_op(sv, (a,), (lambda g: g * sv * (1.0 - sv),))


def tanh(a):
    a = as_tensor(a)
    tv = np.tanh(a.data)
    return make_op(tv, (a,), (lambda g: g * (1.0 - tv * tv),))


def relu(a):
    a = as_tensor(a)
    ad = a.data
    return make_op(np.maximum(ad, 0.0), (a,), (lambda g: g * (ad > 0),))


def clamp(a, lo=None, hi=None):
    a = as_tensor(a)
    ad = a.data
    val = np.clip(ad, lo, hi)
    pass_mask = np.ones_like(ad, dtype=bool)
    if lo is not None:
        pass_mask &= ad >= lo
    if hi is not None:
        pass_mask &= ad <= hi
    return make_op(val, (a,), (lambda g: g * pass_mask,))


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ev = np.exp(shifted)
    sv = ev / ev.sum(axis=axis, keepdims=True)

    def vjp(g):
        return sv * (g - (g * sv).sum(axis=axis, keepdims=True))

    return make_op(sv, (a,), (vjp,))


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    val = shifted - lse
    sv = np.exp(val)

    def vjp(g):
        return g - sv * g.sum(axis=axis, keepdims=True)

    return make_op(val, (a,), (vjp,))


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    ad = a.data
    val = ad.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        n = ad.size
        red = tuple(range(ad.ndim))
    else:
        red = (axis,) if isinstance(axis, int) else tuple(axis)
        red = tuple(ax % ad.ndim for ax in red)
        n = int(np.prod([ad.shape[ax] for ax in red]))

    def vjp(g):
        gg = np.asarray(g)
        if not keepdims:
            for ax in sorted(red):
                gg = np.expand_dims(gg, ax)
        return np.broadcast_to(gg, ad.shape) / n

    return make_op(val, (a,), (vjp,))


def sum_(a, axis=None, keepdims=False):
    a = as_tensor(a)
    ad = a.data
    val = ad.sum(axis=axis, keepdims=keepdims)
    if axis is None:
        red = tuple(range(ad.ndim))
    else:
        red = (axis,) if isinstance(axis, int) else tuple(axis)
        red = tuple(ax % ad.ndim for ax in red)

    def vjp(g):
        gg = np.asarray(g)
        if not keepdims:
            for ax in sorted(red):
                gg = np.expand_dims(gg, ax)
        return np.broadcast_to(gg, ad.shape)

    return make_op(val, (a,), (vjp,))


def layer_norm(a, eps=1e-12):
    """Normalize the last axis to zero mean and unit variance (no affine)."""
    a = as_tensor(a)
    ad = a.data
    mu = ad.mean(axis=-1, keepdims=True)
    var = ad.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (ad - mu) * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return inv * (g - gm - y * gym)

    return make_op(y, (a,), (vjp,))


def avg_pool2(a):
    """Non-overlapping 2x2 average pooling over the last two axes."""
    a = as_tensor(a)
    ad = a.data
    h, w = ad.shape[-2], ad.shape[-1]
    if h % 2 or w % 2:
        raise ValueError(f"avg_pool2: trailing dims must be even, got {ad.shape}")
    lead = ad.shape[:-2]
    val = ad.reshape(lead + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))

    def vjp(g):
        up = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
        return up / 4.0

    return make_op(val, (a,), (vjp,))


# ---------------------------------------------------------------------------
# optimizer and checkpointing

def sgd_step(params, lr):
    """In-place p <- p - lr * grad for every parameter; grads are cleared."""
    if isinstance(params, dict):
        params = list(params.values())
    for p in params:
        if p.grad is None:
            raise ValueError("sgd_step: parameter has no gradient")
    if lr < 0:
        raise ValueError("sgd_step: learning rate must be >= 0")
    for p in params:
        p.data = p.data - lr * p.grad
        p.grad = None


def zero_grads(params):
    for p in params.values() if isinstance(params, dict) else params:
        p.grad = None


def save_checkpoint(params: dict, path):
    """Write a flat little-endian float64 stream plus a JSON manifest.

    ``path`` gets the raw bytes; ``path + '.json'`` lists one entry per
    parameter: {name, shape, offset} with byte offsets into the stream.
    """
    path = Path(path)
    manifest = []
    offset = 0
    with open(path, "wb") as fh:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name].data, dtype="<f8")
            fh.write(arr.tobytes())
            manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    with open(str(path) + ".json", "w") as fh:
        json.dump({"dtype": "<f8", "params": manifest}, fh, indent=1, sort_keys=True)


def load_checkpoint(path) -> dict:
    path = Path(path)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    raw = path.read_bytes()
    out = {}
    for entry in meta["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=entry["offset"])
        out[entry["name"]] = arr.reshape(shape).astype(np.float64)
    return out
