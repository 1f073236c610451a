"""Neural building blocks, parameter registries and the binary checkpoint format."""

import struct

import numpy as np

from . import tensor as T
from .errors import DimensionError, IngestionError
from .tensor import Tensor

WEIGHT, RECURRENT, BIAS, SLOPE = "weight", "recurrent", "bias", "slope"
DECAYED_KINDS = frozenset({WEIGHT, RECURRENT})

CHECKPOINT_MAGIC = b"EDA1"


class ParamRegistry:
    """Ordered ``name -> Tensor`` map for the trainable parameters of one component."""

    def __init__(self, prefix=""):
        self.prefix = prefix
        self._params = {}
        self._kinds = {}

    def add(self, name, shape, kind):
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(shape), requires_grad=True, name=self.prefix + name)
        self._params[name] = t
        self._kinds[name] = kind
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def kind(self, name):
        return self._kinds[name]

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_parameters(self):
        return sum(t.size for t in self._params.values())

    def state(self):
        """Copy of all parameter arrays, keyed by unprefixed name."""
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state(self, state):
        for name, t in self._params.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != t.shape:
                raise DimensionError(f"parameter {name!r}: expected shape {t.shape}, got {arr.shape}")
            t.data[...] = arr


def init_params(registry, seed):
    """Glorot-uniform weights, zero biases, PReLU slopes at 0.25; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    for name, t in registry.items():
        kind = registry.kind(name)
        if kind in DECAYED_KINDS:
            fan_out, fan_in = t.shape[0], t.shape[1]
            if t.ndim == 3:
                fan_in *= t.shape[2]
                fan_out *= t.shape[2]
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            t.data[...] = rng.uniform(-bound, bound, size=t.shape)
        elif kind == SLOPE:
            t.data[...] = 0.25
        else:
            t.data[...] = 0.0


class Linear:
    def __init__(self, registry, name, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out
        self.weight = registry.add(f"{name}.weight", (n_out, n_in), WEIGHT)
        self.bias = registry.add(f"{name}.bias", (n_out,), BIAS)

    def __call__(self, x):
        return linear_forward(self, x)


def linear_forward(layer, x):
    """x @ W^T + b for x of shape [B, in]."""
    if x.ndim != 2 or x.shape[1] != layer.n_in:
        raise DimensionError(f"linear layer expects [B, {layer.n_in}] input, got {x.shape}")
    return T.matmul(x, T.transpose(layer.weight)) + layer.bias


class PReLU:
    def __init__(self, registry, name):
        self.slope = registry.add(f"{name}.slope", (1,), SLOPE)

    def __call__(self, x):
        return T.prelu(x, self.slope)


class Conv1d:
    def __init__(self, registry, name, in_channels, out_channels, kernel_size, stride):
        self.kernel_size = kernel_size
        self.stride = stride
        self.weight = registry.add(f"{name}.weight", (out_channels, in_channels, kernel_size), WEIGHT)
        self.bias = registry.add(f"{name}.bias", (out_channels,), BIAS)

    def output_length(self, length):
        return (length - self.kernel_size) // self.stride + 1

    def __call__(self, x):
        return T.conv1d(x, self.weight, self.bias, self.stride)


class Dropout:
    def __init__(self, rate):
        self.rate = rate

    def __call__(self, x, train, rng=None):
        return T.dropout(x, self.rate, train, rng)


class Gru:
    GATES = ("z", "r", "h")

    def __init__(self, registry, name, input_size, hidden_size):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.w = {g: registry.add(f"{name}.W_{g}", (hidden_size, input_size), WEIGHT) for g in self.GATES}
        self.u = {g: registry.add(f"{name}.U_{g}", (hidden_size, hidden_size), RECURRENT) for g in self.GATES}
        self.b = {g: registry.add(f"{name}.b_{g}", (hidden_size,), BIAS) for g in self.GATES}

    def __call__(self, seq, h0=None, lengths=None):
        return gru_forward(self, seq, h0, lengths)


def gru_forward(layer, seq, h0=None, lengths=None):
    """
    Run ``layer`` over ``seq`` ([T, in], or [B, T, in] with optional lengths).

    Returns ``(states, last)`` where ``last`` is the state at each sequence's
    final valid step.
    """
    if seq.shape[-1] != layer.input_size:
        raise DimensionError(f"GRU expects input size {layer.input_size}, got {seq.shape}")
    if h0 is None:
        lead = seq.shape[:-2]
        h0 = Tensor(np.zeros(lead + (layer.hidden_size,)))
    states = T.gru(seq, h0, *(layer.w[g] for g in Gru.GATES), *(layer.u[g] for g in Gru.GATES),
                   *(layer.b[g] for g in Gru.GATES), lengths=lengths)
    if seq.ndim == 2:
        last = states[seq.shape[0] - 1]
    else:
        n, steps = seq.shape[0], seq.shape[1]
        ends = np.full(n, steps - 1) if lengths is None else np.asarray(lengths) - 1
        last = states[np.arange(n), ends]
    return states, last


def gru_cell(layer, x, h):
    """One GRU step composed from primitive ops; reference for the fused unroll."""
    w, u, b = layer.w, layer.u, layer.b

    def gate(g, hh):
        return T.matmul(x, T.transpose(w[g])) + T.matmul(hh, T.transpose(u[g])) + b[g]

    z = T.sigmoid(gate("z", h))
    r = T.sigmoid(gate("r", h))
    c = T.tanh(gate("h", r * h))
    return (1.0 - z) * h + z * c


# ---------------------------------------------------------------- checkpoint IO

def write_checkpoint(path, params):
    """Write ``(name, array)`` pairs in the little-endian ``EDA1`` layout."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for name, arr in params:
            arr = np.asarray(arr, dtype="<f8", order="C")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path):
    """Inverse of :func:`write_checkpoint`; returns an ordered ``{name: array}``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IngestionError(f"{path}: bad checkpoint magic {blob[:4]!r}")
    out = {}
    pos = 4
    try:
        while pos < len(blob):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            count = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * count > len(blob):
                raise IngestionError(f"{path}: truncated data for parameter {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape).astype(np.float64)
            pos += 8 * count
    except struct.error as exc:
        raise IngestionError(f"{path}: truncated checkpoint ({exc})") from exc
    return out
