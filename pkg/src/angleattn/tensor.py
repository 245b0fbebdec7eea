"""Dense float64 tensors with tape-based reverse-mode differentiation.

Values are numpy arrays; every operation that participates in a gradient
computation records its inputs and a backward closure on the produced
tensor. Calling ``backward()`` on a scalar builds a topologically ordered
tape over the reachable graph and accumulates gradients into every node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError, ContractError, DimensionError, NumericError

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """An n-dimensional float64 value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        # contiguity lets grad_check perturb coordinates through a flat view
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate ``grad`` on every node reachable from this scalar."""
        if self.size != 1:
            raise ContractError(f"backward() requires a scalar loss, got shape {self.shape}")
        Tape.trace(self).backward(self)

    def detach(self):
        return Tensor(self.data.copy())

    # arithmetic sugar; the named functions below do the work
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}, op={self.op!r})"


@dataclass
class Parameter:
    """A named trainable tensor; ``grad`` mirrors the value's shape."""

    name: str
    value: Tensor

    def __post_init__(self):
        self.value.requires_grad = True

    @property
    def grad(self):
        if self.value.grad is None:
            return np.zeros_like(self.value.data)
        return self.value.grad


class Tape:
    """Topologically ordered record of the graph below one root node."""

    def __init__(self, nodes):
        self.nodes = nodes  # inputs precede consumers

    @classmethod
    def trace(cls, root):
        order = []
        seen = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return cls(order)

    def backward(self, root):
        for node in self.nodes:
            node.grad = None
        root.grad = np.ones_like(root.data)
        for node in reversed(self.nodes):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(node, g):
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        node.grad = node.grad + g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, parents, backward_fn, op):
    tracked = any(p.requires_grad or p.parents for p in parents)
    if tracked:
        return Tensor(data, requires_grad=any(p.requires_grad for p in parents),
                      parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are incompatible") from None


def add(a, b):
    _check_broadcast(a, b, "add")
    out_data = a.data + b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward_fn, "add")


def sub(a, b):
    _check_broadcast(a, b, "sub")
    out_data = a.data - b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward_fn, "sub")


def mul(a, b):
    _check_broadcast(a, b, "mul")
    out_data = a.data * b.data

    def backward_fn(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward_fn, "mul")


def scale(a, c):
    c = float(c)

    def backward_fn(g):
        _accumulate(a, g * c)

    return _make(a.data * c, (a,), backward_fn, "scale")


def square(a):
    def backward_fn(g):
        _accumulate(a, 2.0 * a.data * g)

    return _make(a.data * a.data, (a,), backward_fn, "square")


def absolute(a):
    def backward_fn(g):
        _accumulate(a, np.sign(a.data) * g)

    return _make(np.abs(a.data), (a,), backward_fn, "abs")


def tanh(a):
    y = np.tanh(a.data)

    def backward_fn(g):
        _accumulate(a, (1.0 - y * y) * g)

    return _make(y, (a,), backward_fn, "tanh")


def gelu(a):
    """Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    y = x * cdf

    def backward_fn(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        _accumulate(a, (cdf + x * pdf) * g)

    return _make(y, (a,), backward_fn, "gelu")


def log(a):
    def backward_fn(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward_fn, "log")


def clamp_min(a, floor):
    floor = float(floor)
    mask = a.data >= floor

    def backward_fn(g):
        _accumulate(a, g * mask)

    return _make(np.maximum(a.data, floor), (a,), backward_fn, "clamp_min")


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul}
_ELEMENTWISE_UNARY = {"square": square, "tanh": tanh, "gelu": gelu}


def elementwise(kind, *operands):
    """Dispatch by name; ``scale`` takes (tensor, scalar)."""
    if kind in _ELEMENTWISE_BINARY:
        return _ELEMENTWISE_BINARY[kind](*operands)
    if kind in _ELEMENTWISE_UNARY:
        return _ELEMENTWISE_UNARY[kind](*operands)
    if kind == "scale":
        return scale(*operands)
    raise ConfigError(f"unknown elementwise kind {kind!r}")


def matmul(a, b):
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands must be at least 2-D, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents differ, {a.shape} x {b.shape}")
    try:
        out_data = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: batch extents differ, {a.shape} x {b.shape}") from None

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accumulate(a, _unbroadcast(ga, a.shape))
        _accumulate(b, _unbroadcast(gb, b.shape))

    return _make(out_data, (a, b), backward_fn, "matmul")


def transpose(a, axes=None):
    if axes is None:
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = tuple(axes)
    inverse = np.argsort(axes)

    def backward_fn(g):
        _accumulate(a, np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), backward_fn, "transpose")


def reshape(a, shape):
    def backward_fn(g):
        _accumulate(a, g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward_fn, "reshape")


def slice_axis(a, axis, start, stop):
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward_fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _make(a.data[index], (a,), backward_fn, "slice")


def concat(tensors, axis):
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(index)])

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _make(data, tuple(tensors), backward_fn, "concat")


def sum_all(a):
    def backward_fn(g):
        _accumulate(a, np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(), (a,), backward_fn, "sum")


def sum_axis(a, axis):
    def backward_fn(g):
        _accumulate(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), backward_fn, "sum_axis")


def reduce_mean(a, axis=None):
    """Arithmetic mean along one axis, or over all elements when axis is None."""
    if axis is None:
        return scale(sum_all(a), 1.0 / a.size)
    axis = axis if axis >= 0 else a.ndim + axis
    if not 0 <= axis < a.ndim:
        raise DimensionError(f"reduce_mean: axis {axis} invalid for shape {a.shape}")
    return scale(sum_axis(a, axis), 1.0 / a.shape[axis])


def softmax_rows(x):
    """Row-wise softmax along the last axis, max-shifted for stability."""
    if np.isnan(x.data).any():
        raise NumericError("softmax_rows: NaN input")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accumulate(x, y * (g - inner))

    return _make(y, (x,), backward_fn, "softmax_rows")


def l2_normalize_rows(x, eps=1e-12):
    """Divide each last-axis row by max(||row||_2, eps)."""
    norms = np.linalg.norm(x.data, axis=-1, keepdims=True)
    denom = np.maximum(norms, eps)
    y = x.data / denom
    active = norms >= eps  # below eps the denominator is constant

    def backward_fn(g):
        inner = (g * x.data).sum(axis=-1, keepdims=True)
        _accumulate(x, g / denom - active * x.data * inner / denom**3)

    return _make(y, (x,), backward_fn, "l2_normalize_rows")


def layer_norm(x, scale_t, shift_t, eps=1e-5):
    """Per-vector standardization over the last axis, then affine."""
    d = x.shape[-1]
    if scale_t.shape != (d,) or shift_t.shape != (d,):
        raise DimensionError(
            f"layer_norm: scale/shift shapes {scale_t.shape}/{shift_t.shape} do not match d={d}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = scale_t.data * xhat + shift_t.data

    def backward_fn(g):
        _accumulate(scale_t, (g * xhat).reshape(-1, d).sum(axis=0))
        _accumulate(shift_t, g.reshape(-1, d).sum(axis=0))
        gh = g * scale_t.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        _accumulate(x, gx)

    return _make(y, (x, scale_t, shift_t), backward_fn, "layer_norm")


def dropout(x, rate, training, rng):
    """Inverted dropout; identity at rate 0 or in inference mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        def backward_fn(g):
            _accumulate(x, g)

        return _make(x.data.copy(), (x,), backward_fn, "dropout")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)

    def backward_fn(g):
        _accumulate(x, g * keep)

    return _make(x.data * keep, (x,), backward_fn, "dropout")


def grad_check(f, params, h=1e-5, max_coords=24, rng=None):
    """Max relative error between analytic and central-difference gradients.

    ``f`` must be a deterministic scalar-valued function of the parameter
    tensors. Up to ``max_coords`` coordinates per tensor are probed.
    """
    rng = rng or np.random.default_rng(0)
    tensors = [p.value if isinstance(p, Parameter) else p for p in params]
    loss = f()
    loss.backward()
    analytic = [np.array(t.grad, copy=True) if t.grad is not None else np.zeros_like(t.data)
                for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        n = t.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        for flat_idx in coords:
            idx = np.unravel_index(flat_idx, t.shape)
            orig = t.data[idx]
            t.data[idx] = orig + h
            fp = f().item()
            t.data[idx] = orig - h
            fm = f().item()
            t.data[idx] = orig
            numeric = (fp - fm) / (2.0 * h)
            ana = a[idx]
            err = abs(ana - numeric) / max(1.0, abs(ana), abs(numeric))
            worst = max(worst, err)
    return worst
