"""Dense float64 tensors with reverse-mode automatic differentiation.

Each operation stores its parent tensors and a backward closure on the
output tensor; ``Tensor.backward`` replays the closures in reverse
creation order, which is a reverse topological order of the recorded
graph. Everything is float64 and single-threaded deterministic: the same
graph built twice produces bit-identical values and gradients.
"""

from __future__ import annotations

import itertools
import math
import warnings
from contextlib import contextmanager

import numpy as np

LOG_FLOOR = 1e-12

_grad_enabled = True
_next_seq = itertools.count().__next__


@contextmanager
def no_grad():
    """Disable recording of backward closures inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float64 array plus bookkeeping for reverse-mode autodiff."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_bwd", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._bwd = None
        self._seq = _next_seq()

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def backward(self):
        """Reverse sweep from a scalar loss, accumulating ``.grad`` on every
        tensor that requires gradients and is reachable from this one."""
        if self.data.shape != ():
            raise ValueError(f"backward requires a scalar loss, got shape {self.data.shape}")
        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            t = stack.pop()
            if t._bwd is not None:
                nodes.append(t)
            for p in t._parents:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        # creation order is a topological order, so its reverse is valid
        nodes.sort(key=lambda t: t._seq, reverse=True)
        self.grad = np.ones((), dtype=np.float64)
        for t in nodes:
            t._bwd(t.grad)

    # -- operators ----------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def parameter(data) -> Tensor:
    """A leaf tensor that participates in gradient computation."""
    return Tensor(data, requires_grad=True)


def constant(data) -> Tensor:
    return Tensor(data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, bwd) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = True
    t.grad = None
    t._parents = parents
    t._bwd = bwd
    t._seq = _next_seq()
    return t


def _leaf(data) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = data
    t.requires_grad = False
    t.grad = None
    t._parents = ()
    t._bwd = None
    t._seq = _next_seq()
    return t


def _acc(t: Tensor, g):
    # contributions are never mutated in place, so sharing `g` is safe
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g, shape):
    """Sum a gradient over the axes that numpy broadcasting expanded."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _recording(*tensors) -> bool:
    return _grad_enabled and any(t.requires_grad for t in tensors)


# -- arithmetic primitives ---------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data
    if not _recording(a, b):
        return _leaf(data)

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g, b.data.shape))

    return _node(data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data
    if not _recording(a, b):
        return _leaf(data)

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g, b.data.shape))

    return _node(data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data
    if not _recording(a, b):
        return _leaf(data)

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(data, (a, b), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data
    if not _recording(a, b):
        return _leaf(data)

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _node(data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    data = a.data * c
    if not _recording(a):
        return _leaf(data)

    def bwd(g):
        _acc(a, g * c)

    return _node(data, (a,), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must have at least 2 dimensions")
    data = a.data @ b.data
    if not _recording(a, b):
        return _leaf(data)

    def bwd(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))

    return _node(data, (a, b), bwd)


# -- shape primitives ---------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape)
    if not _recording(a):
        return _leaf(data)
    orig = a.data.shape

    def bwd(g):
        _acc(a, g.reshape(orig))

    return _node(data, (a,), bwd)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = a.data.transpose(axes)
    if not _recording(a):
        return _leaf(data)
    inverse = tuple(np.argsort(axes))

    def bwd(g):
        _acc(a, g.transpose(inverse))

    return _node(data, (a,), bwd)


def take_row(a: Tensor, index: int) -> Tensor:
    """Extract row ``index`` along the second-to-last axis, keeping the axis
    (2-D: (1, d); batched 3-D: (B, 1, d))."""
    data = a.data[..., index : index + 1, :]
    if not _recording(a):
        return _leaf(data)

    def bwd(g):
        z = np.zeros_like(a.data)
        z[..., index : index + 1, :] = g
        _acc(a, z)

    return _node(data, (a,), bwd)


def embedding(table: Tensor, ids) -> Tensor:
    """Gather rows of ``table`` (id list -> (len(ids), d))."""
    idx = np.asarray(ids, dtype=np.intp)
    data = table.data[idx]
    if not _recording(table):
        return _leaf(data)

    def bwd(g):
        z = np.zeros_like(table.data)
        np.add.at(z, idx, g)
        _acc(table, z)

    return _node(data, (table,), bwd)


# -- reductions ----------------------------------------------------------------

def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)
    if not _recording(a):
        return _leaf(data)
    shape = a.data.shape

    def bwd(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, shape))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg, shape))

    return _node(data, (a,), bwd)


# -- nonlinearities -------------------------------------------------------------

def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)
    if not _recording(a):
        return _leaf(data)

    def bwd(g):
        _acc(a, g * (1.0 - data * data))

    return _node(data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    if not _recording(a):
        return _leaf(data)

    def bwd(g):
        _acc(a, g * data * (1.0 - data))

    return _node(data, (a,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """Smooth tanh-form GELU; preferred over ReLU so that every loss here is
    differentiable everywhere (keeps finite-difference checks tight)."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)
    if not _recording(a):
        return _leaf(data)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        _acc(a, g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner))

    return _node(data, (a,), bwd)


def tabs(a: Tensor) -> Tensor:
    data = np.abs(a.data)
    if not _recording(a):
        return _leaf(data)
    sign = np.sign(a.data)

    def bwd(g):
        _acc(a, g * sign)

    return _node(data, (a,), bwd)


def square(a: Tensor) -> Tensor:
    data = a.data * a.data
    if not _recording(a):
        return _leaf(data)

    def bwd(g):
        _acc(a, g * 2.0 * a.data)

    return _node(data, (a,), bwd)


def log_floored(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """log(max(x, floor)); gradients treat floored entries as constants."""
    clipped = np.maximum(a.data, floor)
    data = np.log(clipped)
    if not _recording(a):
        return _leaf(data)
    mask = a.data > floor

    def bwd(g):
        _acc(a, np.where(mask, g / clipped, 0.0))

    return _node(data, (a,), bwd)


def softmax(a: Tensor, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """softmax(x / temperature) along ``axis``, numerically stabilized.

    Rejects non-finite input and non-positive temperature; the output along
    the axis is positive and sums to 1 and is invariant to shifting the
    input by a constant.
    """
    if temperature <= 0:
        raise ValueError(f"softmax temperature must be positive, got {temperature}")
    x = a.data
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input contains non-finite values")
    z = x / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    data = e / e.sum(axis=axis, keepdims=True)
    if not _recording(a):
        return _leaf(data)

    def bwd(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        _acc(a, (g - inner) * data / temperature)

    return _node(data, (a,), bwd)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise gain and bias."""
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xh = xc * inv
    data = xh * gain.data + bias.data
    if not _recording(a, gain, bias):
        return _leaf(data)

    def bwd(g):
        if gain.requires_grad:
            _acc(gain, (g * xh).reshape(-1, x.shape[-1]).sum(axis=0))
        if bias.requires_grad:
            _acc(bias, g.reshape(-1, x.shape[-1]).sum(axis=0))
        if a.requires_grad:
            dxh = g * gain.data
            m1 = dxh.mean(axis=-1, keepdims=True)
            m2 = (dxh * xh).mean(axis=-1, keepdims=True)
            _acc(a, (dxh - m1 - xh * m2) * inv)

    return _node(data, (a, gain, bias), bwd)


# -- gradient utilities ----------------------------------------------------------

def zero_grads(params) -> None:
    for p in _iter_params(params):
        p.grad = None


def grad_map(loss: Tensor, params: dict) -> dict:
    """Backward from ``loss`` and return {name: gradient} over ``params``.

    Parameters that do not reach the loss get an explicit zero gradient.
    ``params`` gradients are reset first, so the map reflects this loss only.
    """
    zero_grads(params)
    loss.backward()
    out = {}
    for name, p in params.items():
        out[name] = p.grad if p.grad is not None else np.zeros_like(p.data)
    return out


def _iter_params(params):
    if isinstance(params, dict):
        return params.values()
    return params


def finite_diff_check(f, params, step: float = 1e-5) -> float:
    """Compare analytic gradients of ``f`` against central finite differences.

    ``f`` is a zero-argument callable rebuilding a scalar loss from the
    current parameter values. Returns the max over all parameter coordinates
    of |analytic - central| / max(1, |analytic|, |central|). Coordinates at
    which the perturbed loss is non-finite are reported via a warning and
    force the result to inf.
    """
    if not (1e-7 <= step <= 1e-3):
        raise ValueError(f"step must lie in [1e-7, 1e-3], got {step}")
    plist = list(_iter_params(params))
    zero_grads(plist)
    loss = f()
    loss.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in plist]
    worst = 0.0
    with no_grad():
        for p, an in zip(plist, analytic):
            flat = p.data.reshape(-1)
            aflat = an.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                fp = float(f().data)
                flat[i] = orig - step
                fm = float(f().data)
                flat[i] = orig
                if not (math.isfinite(fp) and math.isfinite(fm)):
                    warnings.warn(f"non-finite loss while perturbing coordinate {i} of a parameter")
                    worst = math.inf
                    continue
                central = (fp - fm) / (2.0 * step)
                a = aflat[i]
                err = abs(a - central) / max(1.0, abs(a), abs(central))
                if err > worst:
                    worst = err
    return worst
