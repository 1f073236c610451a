"""
Encoder (ENC), emotion classifier (EC) and domain classifier (DC).

ENC has an acoustic branch (two strided valid Conv1D + PReLU, then a GRU), a
visual branch (a GRU over precomputed face embeddings) and a merge MLP.  EC
and DC are three-layer PReLU MLPs on the shared representation.  Each of the
three components owns a separate :class:`ParamRegistry`.
"""

import hashlib
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, IngestionError, SequenceTooShortError
from .layers import (Conv1d, Dropout, Gru, Linear, ParamRegistry, PReLU, gru_forward, init_params,
                     read_checkpoint, write_checkpoint)
from .tensor import Tensor

POOLING_MODES = ("last", "mean")
COMPONENTS = ("enc", "ec", "dc")


@dataclass
class ModelConfig:
    acoustic_dim: int = 41
    visual_dim: int = 512
    repr_dim: int = 128
    num_emotions: int = 4
    num_domains: int = 2
    dropout_rate: float = 0.5
    pooling: str = "last"
    conv1_channels: int = 64
    conv1_kernel: int = 10
    conv2_channels: int = 128
    conv2_kernel: int = 5
    conv_stride: int = 2
    acoustic_hidden: int = 128
    visual_hidden: int = 512
    head_hidden1: int = 32
    head_hidden2: int = 10

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.type is int and (not isinstance(v, (int, np.integer)) or v < 1):
                raise ConfigError(f"{f.name} must be a positive integer, got {v!r}")
        if self.num_emotions < 2:
            raise ConfigError("num_emotions must be at least 2")
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @classmethod
    def small(cls, **overrides):
        """Reduced extents (acoustic 8, visual 16, representation 16) for fast runs."""
        base = dict(acoustic_dim=8, visual_dim=16, repr_dim=16, conv1_channels=8, conv2_channels=16,
                    acoustic_hidden=16, visual_hidden=16, head_hidden1=16, head_hidden2=8)
        base.update(overrides)
        return cls(**base)

    def min_acoustic_length(self):
        """Shortest acoustic sequence that leaves at least one frame after both convolutions."""
        return (self.conv2_kernel - 1) * self.conv_stride + self.conv1_kernel

    def conv_output_length(self, length):
        t1 = (length - self.conv1_kernel) // self.conv_stride + 1
        return (t1 - self.conv2_kernel) // self.conv_stride + 1


class ModelBundle:
    def __init__(self, config=None, seed=0):
        self.config = cfg = config or ModelConfig()
        self.enc_params = enc = ParamRegistry("enc.")
        self.ec_params = ec = ParamRegistry("ec.")
        self.dc_params = dc = ParamRegistry("dc.")

        self.conv1 = Conv1d(enc, "conv1", cfg.acoustic_dim, cfg.conv1_channels, cfg.conv1_kernel, cfg.conv_stride)
        self.act1 = PReLU(enc, "prelu1")
        self.conv2 = Conv1d(enc, "conv2", cfg.conv1_channels, cfg.conv2_channels, cfg.conv2_kernel, cfg.conv_stride)
        self.act2 = PReLU(enc, "prelu2")
        self.acoustic_gru = Gru(enc, "acoustic_gru", cfg.conv2_channels, cfg.acoustic_hidden)
        self.visual_gru = Gru(enc, "visual_gru", cfg.visual_dim, cfg.visual_hidden)
        self.merge1 = Linear(enc, "merge1", cfg.acoustic_hidden + cfg.visual_hidden, cfg.repr_dim)
        self.merge_act = PReLU(enc, "merge_prelu")
        self.dropout = Dropout(cfg.dropout_rate)
        self.merge2 = Linear(enc, "merge2", cfg.repr_dim, cfg.repr_dim)

        self.ec_layers = _head(ec, cfg, cfg.num_emotions)
        self.dc_layers = _head(dc, cfg, cfg.num_domains)
        self.init(seed)

    def init(self, seed):
        for i, reg in enumerate(self.registries()):
            init_params(reg, seed * 3 + i)

    def registries(self):
        return (self.enc_params, self.ec_params, self.dc_params)

    def named_registries(self):
        return dict(zip(COMPONENTS, self.registries()))

    def zero_grad(self):
        for reg in self.registries():
            reg.zero_grad()

    def state(self):
        return {f"{c}.{k}": v for c, reg in zip(COMPONENTS, self.registries()) for k, v in reg.state().items()}

    def load_state(self, state):
        for c, reg in zip(COMPONENTS, self.registries()):
            reg.load_state({k[len(c) + 1:]: v for k, v in state.items() if k.startswith(c + ".")})

    def fingerprint(self):
        h = hashlib.sha1()
        for name, arr in self.state().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def _head(registry, cfg, n_out):
    return [
        Linear(registry, "fc1", cfg.repr_dim, cfg.head_hidden1), PReLU(registry, "prelu1"),
        Linear(registry, "fc2", cfg.head_hidden1, cfg.head_hidden2), PReLU(registry, "prelu2"),
        Linear(registry, "fc3", cfg.head_hidden2, n_out),
    ]


def _pad(seqs, dim, what):
    lengths = np.array([s.shape[0] for s in seqs])
    out = np.zeros((len(seqs), lengths.max(), dim))
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[1] != dim:
            raise DimensionError(f"{what} features must be [T, {dim}], got {s.shape}")
        out[i, :len(s)] = s
    return out, lengths


def _pool(bundle, gru, seq, lengths):
    states, last = gru_forward(gru, seq, lengths=lengths)
    if bundle.config.pooling == "last":
        return last
    steps = seq.shape[1]
    weights = (np.arange(steps)[None, :] < lengths[:, None]) / lengths[:, None]
    return T.sum_(states * weights[:, :, None], axis=1)


def encode_batch(bundle, samples, train=False, rng=None):
    """Representations enc(x) for a list of samples, stacked as [B, repr_dim].

    Variable lengths are zero-padded; the convolutions are valid and the GRUs
    stop at each sample's own length, so the result equals encoding each
    sample on its own.
    """
    cfg = bundle.config
    if not samples:
        raise DimensionError("cannot encode an empty batch")
    minimum = cfg.min_acoustic_length()
    for s in samples:
        if s.acoustic.shape[0] < minimum:
            raise SequenceTooShortError(s.acoustic.shape[0], minimum, f"acoustic sequence of {getattr(s, 'id', '?')}")
        if s.visual.shape[0] < 1:
            raise SequenceTooShortError(0, 1, f"visual sequence of {getattr(s, 'id', '?')}")

    acoustic, a_len = _pad([s.acoustic for s in samples], cfg.acoustic_dim, "acoustic")
    visual, v_len = _pad([s.visual for s in samples], cfg.visual_dim, "visual")

    x = Tensor(acoustic.transpose(0, 2, 1))  # [B, C, T]
    x = bundle.act1(bundle.conv1(x))
    x = bundle.act2(bundle.conv2(x))
    a_repr = _pool(bundle, bundle.acoustic_gru, T.transpose(x, (0, 2, 1)), cfg.conv_output_length(a_len))
    v_repr = _pool(bundle, bundle.visual_gru, Tensor(visual), v_len)

    h = bundle.merge_act(bundle.merge1(T.concat([a_repr, v_repr], axis=-1)))
    h = bundle.dropout(h, train, rng)
    return bundle.merge2(h)


def encode(bundle, sample, train=False, rng=None):
    """Representation of a single sample, shape [repr_dim]."""
    return encode_batch(bundle, [sample], train, rng)[0]


def _run_head(layers, repr_):
    single = repr_.ndim == 1
    x = T.reshape(repr_, (1, -1)) if single else repr_
    for layer in layers:
        x = layer(x)
    return x[0] if single else x


def emotion_logits(bundle, repr_):
    """EC logits ([K] or [B, K]); no softmax applied."""
    return _run_head(bundle.ec_layers, repr_)


def domain_logits(bundle, repr_):
    """DC logits ([2] or [B, 2]); no softmax applied."""
    return _run_head(bundle.dc_layers, repr_)


def predict_logits(bundle, samples, batch_size=256):
    """Evaluation-mode emotion logits for ``samples`` as a numpy array."""
    out = []
    with T.no_grad():
        for i in range(0, len(samples), batch_size):
            out.append(emotion_logits(bundle, encode_batch(bundle, samples[i:i + batch_size])).data)
    return np.concatenate(out, axis=0)


def representations(bundle, samples, batch_size=256):
    with T.no_grad():
        return np.concatenate([encode_batch(bundle, samples[i:i + batch_size]).data
                               for i in range(0, len(samples), batch_size)], axis=0)


# ---------------------------------------------------------------- persistence

CHECKPOINT_FILE = "model.eda"
MANIFEST_FILE = "model.manifest"


def write_model_manifest(path, config):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in asdict(config).items():
            fh.write(f"{key}={value}\n")


def read_model_manifest(path):
    types = {f.name: f.type for f in fields(ModelConfig)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key not in types:
                raise IngestionError(f"{path}: unknown model manifest key {key!r}")
            values[key] = types[key](value)
    return ModelConfig(**values)


def save_bundle(bundle, directory, state=None):
    os.makedirs(directory, exist_ok=True)
    state = bundle.state() if state is None else state
    write_checkpoint(os.path.join(directory, CHECKPOINT_FILE), state.items())
    write_model_manifest(os.path.join(directory, MANIFEST_FILE), bundle.config)


def load_bundle(directory):
    config = read_model_manifest(os.path.join(directory, MANIFEST_FILE))
    bundle = ModelBundle(config)
    state = read_checkpoint(os.path.join(directory, CHECKPOINT_FILE))
    expected = set(bundle.state())
    if set(state) != expected:
        missing = sorted(expected - set(state))
        extra = sorted(set(state) - expected)
        raise IngestionError(f"checkpoint does not match manifest (missing {missing[:3]}, unexpected {extra[:3]})")
    bundle.load_state(state)
    return bundle
