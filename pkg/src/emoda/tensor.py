"""
Reverse-mode automatic differentiation over dense float64 numpy arrays.

Every op builds a node holding its parents and a closure mapping the upstream
gradient to one gradient per parent.  Nodes get a monotonically increasing id
at creation, so the creation order is a valid tape: replaying nodes by
decreasing id visits every node after all of its consumers.

Only leaf tensors (parameters, inputs created with ``requires_grad=True``)
accumulate into ``.grad``; intermediate gradients live in a scratch table for
the duration of one ``backward`` call.  Calling ``backward`` twice without
zeroing therefore doubles every leaf gradient exactly.
"""

import itertools
import threading
from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError, DomainError, ParameterError, SequenceTooShortError

_ids = itertools.count()
_local = threading.local()


def is_grad_enabled():
    return getattr(_local, "enabled", True)


@contextmanager
def no_grad():
    """Build no graph inside the block; op outputs are plain constants."""
    prev = is_grad_enabled()
    _local.enabled = False
    try:
        yield
    finally:
        _local.enabled = prev


@contextmanager
def frozen(tensors):
    """Temporarily treat ``tensors`` as constants (gradients still flow around them)."""
    tensors = list(tensors)
    prev = [t.requires_grad for t in tensors]
    for t in tensors:
        t.requires_grad = False
    try:
        yield
    finally:
        for t, p in zip(tensors, prev):
            t.requires_grad = p


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_id")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._id = next(_ids)

    @classmethod
    def _node(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        out._id = next(_ids)
        if is_grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def __repr__(self):
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{label})"

    def backward(self):
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        nodes = []
        seen = set()
        stack = [self]
        while stack:
            node = stack.pop()
            if node._id in seen:
                continue
            seen.add(node._id)
            nodes.append(node)
            stack.extend(p for p in node._parents if p.requires_grad)
        nodes.sort(key=lambda n: n._id, reverse=True)

        pending = {self._id: np.ones_like(self.data)}
        for node in nodes:
            g = pending.pop(node._id, None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._id in pending:
                    pending[parent._id] = pending[parent._id] + pg
                else:
                    pending[parent._id] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only defined by a constant")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._node(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._node(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return Tensor._node(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def neg(a):
    return Tensor._node(-a.data, (a,), lambda g: (-g,), "neg")


def exp(a):
    out = np.exp(a.data)
    return Tensor._node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if np.any(a.data <= 0):
        raise DomainError(f"log of nonpositive value (min {a.data.min()!r})")
    return Tensor._node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a):
    out = _sigmoid(a.data)
    return Tensor._node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def prelu(x, slope):
    """x where x > 0, else slope * x.  ``slope`` is a learned scalar tensor."""
    slope = as_tensor(slope)
    if slope.size != 1:
        raise DimensionError(f"prelu slope must be a scalar, got shape {slope.shape}")
    s = slope.data.reshape(-1)[0]
    pos = x.data > 0
    out = np.where(pos, x.data, s * x.data)

    def backward(g):
        gx = np.where(pos, g, s * g)
        gs = np.sum(np.where(pos, 0.0, g * x.data)).reshape(slope.shape)
        return gx, gs

    return Tensor._node(out, (x, slope), backward, "prelu")


def dropout(x, rate, train, rng=None):
    """Inverted dropout; the identity when not training or when ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ParameterError("dropout in training mode needs an explicit rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return Tensor._node(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- structural

def sum_(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor._node(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / n)


def reshape(a, shape):
    out = a.data.reshape(shape)
    return Tensor._node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor._node(out, (a,), lambda g: (np.transpose(g, inv),), "transpose")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._node(out, tuple(tensors), backward, "concat")


def stack(tensors, axis=0):
    return concat([reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def index(a, key):
    out = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        return (full,)

    return Tensor._node(np.array(out), (a,), backward, "index")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return Tensor._node(
        a.data @ b.data, (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def conv1d(x, kernels, bias, stride=1):
    """
    Valid (unpadded) 1-D cross-correlation.

    x is [C_in, T] or [B, C_in, T]; kernels [C_out, C_in, K]; bias [C_out].
    Output length is floor((T - K) / stride) + 1.
    """
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    c_out, c_in, k = kernels.shape
    if xd.ndim != 3 or xd.shape[1] != c_in:
        raise DimensionError(f"conv1d expects {c_in} input channels, got input shape {x.shape}")
    if bias.shape != (c_out,):
        raise DimensionError(f"conv1d bias shape {bias.shape} does not match {c_out} output channels")
    t = xd.shape[2]
    if t < k:
        raise SequenceTooShortError(t, k, "conv1d input")
    t_out = (t - k) // stride + 1
    taps = np.arange(k)[None, :] + stride * np.arange(t_out)[:, None]  # [T_out, K]
    windows = xd[:, :, taps]  # [B, C_in, T_out, K]
    w = kernels.data
    out = np.einsum("bctk,ock->bot", windows, w, optimize=True) + bias.data[None, :, None]

    def backward(g):
        g3 = g if batched else g[None]
        gw = np.einsum("bot,bctk->ock", g3, windows, optimize=True)
        gb = g3.sum(axis=(0, 2))
        gx = np.zeros_like(xd)
        for j in range(k):
            gx[:, :, j:j + stride * (t_out - 1) + 1:stride] += np.einsum("bot,oc->bct", g3, w[:, :, j])
        return (gx if batched else gx[0]), gw, gb

    return Tensor._node(out if batched else out[0], (x, kernels, bias), backward, "conv1d")


# ---------------------------------------------------------------- softmax family

def _check_temperature(temperature):
    if not temperature > 0:
        raise ParameterError(f"temperature must be positive, got {temperature}")


def softmax(logits, temperature=1.0):
    """Row softmax over the last axis of logits / temperature."""
    _check_temperature(temperature)
    z = logits.data / temperature
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return ((out * (g - np.sum(g * out, axis=-1, keepdims=True))) / temperature,)

    return Tensor._node(out, (logits,), backward, "softmax")


def log_softmax(logits, temperature=1.0):
    _check_temperature(temperature)
    z = logits.data / temperature
    shifted = z - z.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    probs = np.exp(out)

    def backward(g):
        return ((g - probs * g.sum(axis=-1, keepdims=True)) / temperature,)

    return Tensor._node(out, (logits,), backward, "log_softmax")


# ---------------------------------------------------------------- recurrent

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru(x, h0, w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h, lengths=None):
    """
    Unrolled GRU over a sequence, with hand-written backpropagation through time.

        z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
        r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
        c_t = tanh(W_h x_t + U_h (r_t * h_{t-1}) + b_h)
        h_t = (1 - z_t) * h_{t-1} + z_t * c_t

    x is [T, in] or [B, T, in] and h0 is [H] or [B, H].  Returns all hidden
    states with the same leading layout as x.  With ``lengths`` (batched
    only), steps at t >= lengths[b] copy the previous state forward, which
    makes a padded batch numerically identical to running samples one by one.
    """
    batched = x.ndim == 3
    xd = x.data if batched else x.data[None]
    hd = h0.data if batched else h0.data[None]
    n, steps, _ = xd.shape
    if steps < 1:
        raise ContractError("gru needs a sequence with at least one step")
    hidden = u_z.shape[0]
    if hd.shape != (n, hidden):
        raise DimensionError(f"gru initial state shape {h0.shape} does not match hidden size {hidden}")
    for w in (w_z, w_r, w_h):
        if w.shape != (hidden, xd.shape[2]):
            raise DimensionError(f"gru input weight shape {w.shape} does not match ({hidden}, {xd.shape[2]})")
    if lengths is None:
        mask = None
    else:
        lengths = np.asarray(lengths)
        if not batched or lengths.shape != (n,):
            raise DimensionError("gru lengths need a batched input with one length per sample")
        if lengths.min() < 1 or lengths.max() > steps:
            raise ContractError(f"gru lengths must lie in [1, {steps}]")
        mask = (np.arange(steps)[None, :] < lengths[:, None]).astype(np.float64)[:, :, None]

    # input projections for every step at once
    px_z = xd @ w_z.data.T + b_z.data
    px_r = xd @ w_r.data.T + b_r.data
    px_h = xd @ w_h.data.T + b_h.data
    uz, ur, uh = u_z.data, u_r.data, u_h.data

    states = np.empty((n, steps, hidden))
    zs = np.empty_like(states)
    rs = np.empty_like(states)
    cs = np.empty_like(states)
    prev = np.empty_like(states)
    h = hd
    for t in range(steps):
        prev[:, t] = h
        z = _sigmoid(px_z[:, t] + h @ uz.T)
        r = _sigmoid(px_r[:, t] + h @ ur.T)
        c = np.tanh(px_h[:, t] + (r * h) @ uh.T)
        h_new = h + z * (c - h)
        if mask is not None:
            m = mask[:, t]
            h_new = m * h_new + (1.0 - m) * h
        zs[:, t], rs[:, t], cs[:, t] = z, r, c
        states[:, t] = h_new
        h = h_new

    def backward(g):
        g3 = g if batched else g[None]
        gx = np.zeros_like(xd)
        gw = [np.zeros_like(w.data) for w in (w_z, w_r, w_h)]
        gu = [np.zeros_like(u.data) for u in (u_z, u_r, u_h)]
        gb = [np.zeros(hidden) for _ in range(3)]
        dh_next = np.zeros((n, hidden))
        for t in range(steps - 1, -1, -1):
            dh = g3[:, t] + dh_next
            hp, z, r, c = prev[:, t], zs[:, t], rs[:, t], cs[:, t]
            if mask is not None:
                m = mask[:, t]
                dh_prev = (1.0 - m) * dh
                dh = m * dh
            else:
                dh_prev = np.zeros_like(dh)
            dz = dh * (c - hp)
            dc = dh * z
            dh_prev += dh * (1.0 - z)
            da_h = dc * (1.0 - c * c)
            drh = da_h @ uh
            dr = drh * hp
            dh_prev += drh * r
            da_r = dr * r * (1.0 - r)
            da_z = dz * z * (1.0 - z)
            dh_prev += da_r @ ur + da_z @ uz
            xt = xd[:, t]
            gu[0] += da_z.T @ hp
            gu[1] += da_r.T @ hp
            gu[2] += da_h.T @ (r * hp)
            for i, da in enumerate((da_z, da_r, da_h)):
                gw[i] += da.T @ xt
                gb[i] += da.sum(axis=0)
            gx[:, t] = da_z @ w_z.data + da_r @ w_r.data + da_h @ w_h.data
            dh_next = dh_prev
        gh0 = dh_next if batched else dh_next[0]
        return ((gx if batched else gx[0]), gh0, *gw, *gu, *gb)

    parents = (x, h0, w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h)
    return Tensor._node(states if batched else states[0], parents, backward, "gru")
