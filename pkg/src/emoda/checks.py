"""
The finite-difference gradient suite behind the ``gradcheck`` command.

Every differentiable op, the GRU (single step and unrolled), the linear
layer, all losses and the composed ENC->EC / ENC->DC paths are checked on
``instances`` random draws each.  Primitive ops are held to a relative
error of 1e-6, composite ones to 1e-5.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import SynthConfig, generate_synthetic
from .gradcheck import check_gradients
from .layers import Gru, Linear, ParamRegistry, gru_forward, init_params, linear_forward
from .losses import (LossWeights, SoftLabelTable, confusion_entropy, domain_ce_loss, emotion_ce_loss, softlabel_loss,
                     total_loss)
from .model import ModelBundle, ModelConfig, domain_logits, emotion_logits, encode_batch
from .tensor import Tensor

PRIMITIVE_TOL = 1e-6
COMPOSITE_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    worst_error: float
    tolerance: float
    instances: int

    @property
    def passed(self):
        return self.worst_error <= self.tolerance

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} max rel err {self.worst_error:.2e} (tol {self.tolerance:.0e}, n={self.instances})"


def _t(rng, *shape, positive=False):
    data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.standard_normal(shape)
    return Tensor(data, requires_grad=True)


def _projection(rng, shape):
    w = rng.standard_normal(shape)
    return lambda out: T.sum_(out * w)


def _unary(op, positive=False):
    def build(rng):
        x = _t(rng, 3, 4, positive=positive)
        proj = _projection(rng, (3, 4))
        return (lambda: proj(op(x))), [x]
    return build


def _binary(op):
    def build(rng):
        a, b = _t(rng, 3, 4), _t(rng, 1, 4)
        proj = _projection(rng, (3, 4))
        return (lambda: proj(op(a, b))), [a, b]
    return build


def _matmul(rng):
    a, b = _t(rng, 3, 4), _t(rng, 4, 2)
    return (lambda: T.sum_(T.matmul(a, b))), [a, b]


def _conv1d(rng):
    x, w, b = _t(rng, 3, 16), _t(rng, 2, 3, 4), _t(rng, 2)
    stride = int(rng.integers(1, 3))
    proj = _projection(rng, (2, (16 - 4) // stride + 1))
    return (lambda: proj(T.conv1d(x, w, b, stride))), [x, w, b]


def _conv1d_batched(rng):
    x, w, b = _t(rng, 2, 3, 15), _t(rng, 4, 3, 5), _t(rng, 4)
    proj = _projection(rng, (2, 4, 6))
    return (lambda: proj(T.conv1d(x, w, b, 2))), [x, w, b]


def _softmax(temperature, log=False):
    def build(rng):
        z = _t(rng, 3, 4)
        proj = _projection(rng, (3, 4))
        op = T.log_softmax if log else T.softmax
        return (lambda: proj(op(z, temperature))), [z]
    return build


def _prelu(rng):
    x, s = _t(rng, 3, 4), Tensor(rng.uniform(0.05, 0.5, size=(1,)), requires_grad=True)
    proj = _projection(rng, (3, 4))
    return (lambda: proj(T.prelu(x, s))), [x, s]


def _dropout(rng):
    x = _t(rng, 4, 5)
    proj = _projection(rng, (4, 5))
    seed = int(rng.integers(1 << 30))
    return (lambda: proj(T.dropout(x, 0.3, True, np.random.default_rng(seed)))), [x]


def _structural(rng):
    a, b = _t(rng, 2, 3), _t(rng, 2, 2)
    proj = _projection(rng, (5, 2))

    def f():
        c = T.concat([a, b], axis=1)
        r = T.reshape(T.transpose(c), (5, 2))
        return proj(r) + T.mean(T.sum_(c * c, axis=0)) + T.sum_(c[np.array([0, 1, 1]), np.array([0, 2, 4])])
    return f, [a, b]


def _gru_layer(rng, n_in, hidden):
    reg = ParamRegistry()
    layer = Gru(reg, "gru", n_in, hidden)
    for t in reg.values():
        t.data[...] = rng.normal(0.0, 0.5, size=t.shape)
    return layer, list(reg.values())


def _gru_step(rng):
    layer, params = _gru_layer(rng, 3, 4)
    x, h0 = _t(rng, 2, 3), _t(rng, 2, 4)
    proj = _projection(rng, (2, 4))
    return (lambda: proj(T.gru(T.reshape(x, (2, 1, 3)), h0, *params[:3], *params[3:6], *params[6:])
                         [:, 0])), [x, h0] + params


def _gru_unroll(rng):
    layer, params = _gru_layer(rng, 3, 4)
    x, h0 = _t(rng, 5, 3), _t(rng, 4)
    proj = _projection(rng, (5, 4))
    return (lambda: proj(gru_forward(layer, x, h0)[0])), [x, h0] + params


def _gru_masked(rng):
    layer, params = _gru_layer(rng, 3, 4)
    x = _t(rng, 3, 6, 3)
    lengths = np.array([6, 2, 4])
    proj = _projection(rng, (3, 4))
    return (lambda: proj(gru_forward(layer, x, lengths=lengths)[1])), [x] + params


def _linear(rng):
    reg = ParamRegistry()
    layer = Linear(reg, "fc", 5, 3)
    for t in reg.values():
        t.data[...] = rng.standard_normal(t.shape)
    x = _t(rng, 4, 5)
    proj = _projection(rng, (4, 3))
    return (lambda: proj(linear_forward(layer, x))), [x, layer.weight, layer.bias]


def _domain_ce(rng):
    z = _t(rng, 6, 2)
    y = rng.integers(0, 2, size=6)
    return (lambda: domain_ce_loss(z, y)), [z]


def _confusion(rng):
    z = _t(rng, 6, 2)
    return (lambda: confusion_entropy(z)), [z]


def _emotion_ce(rng):
    z = _t(rng, 6, 4)
    y = rng.integers(0, 4, size=6)
    return (lambda: emotion_ce_loss(z, y)), [z]


def _random_table(rng, k=4, tau=2.0):
    rows = rng.dirichlet(np.ones(k), size=k)
    return SoftLabelTable(rows / rows.sum(axis=1, keepdims=True), tau)


def _softlabel(rng):
    z = _t(rng, 6, 4)
    y = rng.integers(0, 4, size=6)
    table = _random_table(rng)
    return (lambda: softlabel_loss(z, y, table)), [z]


def _total(rng):
    ze, zd = _t(rng, 6, 4), _t(rng, 6, 2)
    y = rng.integers(0, 4, size=6)
    table = _random_table(rng)
    w = LossWeights(float(rng.uniform(0, 2)), float(rng.uniform(0, 2)))
    return (lambda: total_loss(emotion_ce_loss(ze, y), confusion_entropy(zd),
                               softlabel_loss(ze[3:], y[3:], table), w)), [ze, zd]


_SMALL_SYNTH = SynthConfig.small(source_counts=(1, 1, 1, 1), target_counts=(1, 1, 1, 1),
                                 acoustic_length=(18, 26), visual_length=(2, 5))


def _composed(head):
    def build(rng):
        seed = int(rng.integers(1 << 30))
        bundle = ModelBundle(ModelConfig.small(), seed=seed)
        samples = generate_synthetic(SynthConfig(**{**_SMALL_SYNTH.__dict__, "seed": seed}))[:3]
        proj = _projection(rng, (3, bundle.config.num_emotions if head is emotion_logits else bundle.config.num_domains))
        params = [t for reg in (bundle.enc_params, bundle.ec_params if head is emotion_logits else bundle.dc_params)
                  for t in reg.values()]
        return (lambda: proj(head(bundle, encode_batch(bundle, samples, train=True,
                                                       rng=np.random.default_rng(seed))))), params
    return build


# (name, builder, tolerance, coordinates sampled per tensor or None for all)
SUITE = [
    ("matmul", _matmul, PRIMITIVE_TOL, None),
    ("conv1d", _conv1d, PRIMITIVE_TOL, None),
    ("conv1d_batched", _conv1d_batched, PRIMITIVE_TOL, None),
    ("softmax_tau1", _softmax(1.0), PRIMITIVE_TOL, None),
    ("softmax_tau2", _softmax(2.0), PRIMITIVE_TOL, None),
    ("log_softmax_tau1", _softmax(1.0, log=True), PRIMITIVE_TOL, None),
    ("log_softmax_tau2", _softmax(2.0, log=True), PRIMITIVE_TOL, None),
    ("add", _binary(T.add), PRIMITIVE_TOL, None),
    ("sub", _binary(T.sub), PRIMITIVE_TOL, None),
    ("mul", _binary(T.mul), PRIMITIVE_TOL, None),
    ("neg", _unary(T.neg), PRIMITIVE_TOL, None),
    ("exp", _unary(T.exp), PRIMITIVE_TOL, None),
    ("log", _unary(T.log, positive=True), PRIMITIVE_TOL, None),
    ("sigmoid", _unary(T.sigmoid), PRIMITIVE_TOL, None),
    ("tanh", _unary(T.tanh), PRIMITIVE_TOL, None),
    ("prelu", _prelu, PRIMITIVE_TOL, None),
    ("dropout", _dropout, PRIMITIVE_TOL, None),
    ("concat_reshape_sum_mean", _structural, PRIMITIVE_TOL, None),
    ("linear", _linear, PRIMITIVE_TOL, None),
    ("gru_step", _gru_step, PRIMITIVE_TOL, None),
    ("gru_unroll", _gru_unroll, COMPOSITE_TOL, None),
    ("gru_masked_batch", _gru_masked, COMPOSITE_TOL, None),
    ("domain_ce_loss", _domain_ce, COMPOSITE_TOL, None),
    ("confusion_entropy", _confusion, COMPOSITE_TOL, None),
    ("emotion_ce_loss", _emotion_ce, COMPOSITE_TOL, None),
    ("softlabel_loss", _softlabel, COMPOSITE_TOL, None),
    ("total_loss", _total, COMPOSITE_TOL, None),
    ("enc_to_ec", _composed(emotion_logits), COMPOSITE_TOL, 6),
    ("enc_to_dc", _composed(domain_logits), COMPOSITE_TOL, 6),
]


def run_check(name, build, tolerance, max_coords=None, instances=10, seed=0):
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    worst = 0.0
    for _ in range(instances):
        f, tensors = build(rng)
        errors = check_gradients(f, tensors, h=1e-5, max_coords=max_coords, rng=rng)
        worst = max(worst, max(errors.values()))
    return CheckResult(name, worst, tolerance, instances)


def run_suite(instances=10, seed=0, names=None):
    return [run_check(name, build, tol, coords, instances, seed)
            for name, build, tol, coords in SUITE if names is None or name in names]
