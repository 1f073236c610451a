"""
Two-phase adversarial training.

Each batch runs PHASE A, which updates only the domain classifier on the
domain cross-entropy with the encoder held fixed, and then PHASE B, which
updates the encoder and emotion classifier on

    L_emo - lambda_conf * L_conf + lambda_soft * L_soft

with the domain classifier frozen.  The first ``warmup_epochs`` epochs run
PHASE B with both lambdas at zero; the softlabel table is built from the
model at the end of warmup and stays frozen afterwards.
"""

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import SOURCE, TARGET, BalancedSampler
from .errors import ConfigError, DivergenceError, PhaseContractError
from .layers import DECAYED_KINDS, ParamRegistry, init_params
from .losses import (LossWeights, build_softlabel_table, confusion_entropy, domain_ce_loss, emotion_ce_loss,
                     softlabel_loss, total_loss)
from .metrics import evaluate
from .model import _head, domain_logits, emotion_logits, encode_batch, representations
from .tensor import Tensor

log = logging.getLogger(__name__)

MODES = ("source_only", "source_plus_target", "adversarial", "adversarial_softlabel")
ADVERSARIAL_MODES = ("adversarial", "adversarial_softlabel")


@dataclass
class TrainConfig:
    lr: float = 0.001
    l2_weight: float = 0.01
    batch_size: int = 32
    epochs: int = 100
    tau: float = 2.0
    lambda_conf: float = 1.0
    lambda_soft: float = 0.1
    warmup_epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mode: str = "adversarial_softlabel"
    debug: bool = False

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs must be in [0, epochs), got {self.warmup_epochs}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ConfigError(f"batch_size must be a positive even number, got {self.batch_size}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        LossWeights(self.lambda_conf, self.lambda_soft)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params, state, cfg):
    """
    One Adam update of every parameter in ``params`` that holds a gradient.

    L2 is added to the gradient (g + l2_weight * theta) for weight and
    recurrent matrices only.  Gradients are cleared afterwards.
    """
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient in parameter {p.name or name}", p.name or name)
        if params.kind(name) in DECAYED_KINDS:
            g = g + cfg.l2_weight * p.data
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name] = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        p.data -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
        p.grad = None


@dataclass
class EpochRecord:
    epoch: int
    l_d: float
    l_emo: float
    l_conf: float
    l_soft: float
    dev_uar: float


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    selected_epoch: int = -1
    phase_checks: int = 0
    batches: int = 0
    softlabel_table: object = None

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "l_d", "l_emo", "l_conf", "l_soft", "dev_uar"])
            for r in self.records:
                writer.writerow([r.epoch, repr(r.l_d), repr(r.l_emo), repr(r.l_conf), repr(r.l_soft), repr(r.dev_uar)])

    @classmethod
    def read_csv(cls, path):
        out = cls()
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                out.records.append(EpochRecord(int(row["epoch"]), *(float(row[k]) for k in
                                                                     ("l_d", "l_emo", "l_conf", "l_soft", "dev_uar"))))
        return out


def _digest(registry):
    h = hashlib.sha1()
    for t in registry.values():
        h.update(t.data.tobytes())
    return h.digest()


def _finite(loss, what):
    value = float(loss.data)
    if not math.isfinite(value):
        raise DivergenceError(f"{what} became non-finite ({value})")
    return value


def _mean(values):
    return float(np.mean(values)) if values else float("nan")


def train(model, source, target_train, target_dev, cfg):
    """
    Train ``model`` in place and return ``(best_state, log)``.

    ``best_state`` is the parameter snapshot with the highest dev UAR (ties
    go to the earlier epoch); the model is left holding that snapshot.
    """
    if not target_dev:
        raise ConfigError("target dev set is empty")
    if not source:
        raise ConfigError("source pool is empty")
    use_target = cfg.mode != "source_only"
    if use_target and not target_train:
        raise ConfigError(f"mode {cfg.mode} needs labelled target training samples")
    adversarial = cfg.mode in ADVERSARIAL_MODES
    tgt = target_train if use_target else []

    sampler = BalancedSampler([s.emotion for s in source], [s.emotion for s in tgt] if use_target else None,
                              cfg.batch_size, [cfg.seed, 1])
    rng_a = np.random.default_rng([cfg.seed, 2])
    rng_b = np.random.default_rng([cfg.seed, 3])
    adam = {name: AdamState() for name in ("enc", "ec", "dc")}
    enc, ec, dc = model.registries()
    table = None
    log_ = TrainLog()
    best_state, best_uar = None, -1.0

    for epoch in range(cfg.epochs):
        warm = epoch < cfg.warmup_epochs
        weights = LossWeights(0.0, 0.0) if warm else LossWeights(cfg.lambda_conf, cfg.lambda_soft)
        if cfg.mode == "adversarial_softlabel" and not warm and table is None:
            table = build_softlabel_table(model, source, cfg.tau)
            log.info("softlabel table built at epoch %d from model %s", epoch, table.source_model_id)
        stats = {"l_d": [], "l_emo": [], "l_conf": [], "l_soft": []}

        for src_idx, tgt_idx in sampler.batches():
            batch = [source[i] for i in src_idx] + [tgt[i] for i in tgt_idx]
            emotions = np.array([s.emotion for s in batch])
            domains = np.array([SOURCE] * len(src_idx) + [TARGET] * len(tgt_idx))
            n_src = len(src_idx)
            log_.batches += 1

            if adversarial:
                before = {k: _digest(r) for k, r in (("enc", enc), ("ec", ec), ("dc", dc))} if cfg.debug else None
                model.zero_grad()
                with T.no_grad():
                    reps = encode_batch(model, batch, train=True, rng=rng_a)
                l_d = domain_ce_loss(domain_logits(model, Tensor(reps.data)), domains)
                stats["l_d"].append(_finite(l_d, "domain loss"))
                l_d.backward()
                if cfg.debug and any(p.grad is not None for r in (enc, ec) for p in r.values()):
                    raise PhaseContractError(f"epoch {epoch}: PHASE A produced encoder/EC gradients")
                adam_step(dc, adam["dc"], cfg)
                if cfg.debug and (_digest(enc) != before["enc"] or _digest(ec) != before["ec"]):
                    raise PhaseContractError(f"epoch {epoch}: PHASE A changed encoder/EC parameters")

            dc_before = _digest(dc) if cfg.debug else None
            model.zero_grad()
            with T.frozen(dc.values()):
                reps = encode_batch(model, batch, train=True, rng=rng_b)
                logits = emotion_logits(model, reps)
                l_emo = emotion_ce_loss(logits, emotions)
                l_conf = confusion_entropy(domain_logits(model, reps)) if adversarial else None
                l_soft = None
                if table is not None and len(tgt_idx):
                    l_soft = softlabel_loss(logits[n_src:], emotions[n_src:], table, domains[n_src:])
                loss = total_loss(l_emo, l_conf, l_soft, weights)
                _finite(loss, "total loss")
                loss.backward()
            stats["l_emo"].append(float(l_emo.data))
            if l_conf is not None:
                stats["l_conf"].append(float(l_conf.data))
            if l_soft is not None:
                stats["l_soft"].append(float(l_soft.data))
            if cfg.debug and any(p.grad is not None for p in dc.values()):
                raise PhaseContractError(f"epoch {epoch}: PHASE B produced domain-classifier gradients")
            adam_step(enc, adam["enc"], cfg)
            adam_step(ec, adam["ec"], cfg)
            if cfg.debug:
                if _digest(dc) != dc_before:
                    raise PhaseContractError(f"epoch {epoch}: PHASE B changed domain-classifier parameters")
                log_.phase_checks += 1

        dev_uar = evaluate(model, target_dev).uar
        rec = EpochRecord(epoch, *(_mean(stats[k]) for k in ("l_d", "l_emo", "l_conf", "l_soft")), dev_uar)
        log_.records.append(rec)
        log.debug("epoch %d: %s", epoch, rec)
        if dev_uar > best_uar:
            best_uar, best_state = dev_uar, model.state()
            log_.selected_epoch = epoch

    model.load_state(best_state)
    log_.softlabel_table = table
    return best_state, log_


def domain_probe_auc(model, source, target, seed=0, steps=300, lr=0.01, standardize=True):
    """
    Held-out accuracy of a freshly trained domain classifier on frozen enc(x).

    Equal numbers of source and target samples are used (so chance is 0.5);
    half of each domain trains the probe and the other half scores it.
    Values near 0.5 mean the representation carries little domain information.
    """
    rng = np.random.default_rng(seed)
    n = min(len(source), len(target))
    if n < 2:
        raise ConfigError("domain probe needs at least two samples per domain")
    src = [source[i] for i in rng.choice(len(source), n, replace=False)]
    tgt = [target[i] for i in rng.choice(len(target), n, replace=False)]
    reps = representations(model, src + tgt)
    labels = np.array([SOURCE] * n + [TARGET] * n)
    half = n // 2
    train_idx = np.r_[0:half, n:n + half]
    test_idx = np.r_[half:n, n + half:2 * n]

    x_train, x_test = reps[train_idx], reps[test_idx]
    if standardize:
        mu, sd = x_train.mean(axis=0), x_train.std(axis=0) + 1e-8
        x_train, x_test = (x_train - mu) / sd, (x_test - mu) / sd

    registry = ParamRegistry("probe.")
    head = _head(registry, model.config, model.config.num_domains)
    init_params(registry, seed)
    cfg = TrainConfig(lr=lr, l2_weight=0.0, epochs=1, warmup_epochs=0)
    state = AdamState()
    xt = Tensor(x_train)

    def forward(x):
        for layer in head:
            x = layer(x)
        return x

    for _ in range(steps):
        loss = domain_ce_loss(forward(xt), labels[train_idx])
        loss.backward()
        adam_step(registry, state, cfg)
    with T.no_grad():
        pred = np.argmax(forward(Tensor(x_test)).data, axis=1)
    return float(np.mean(pred == labels[test_idx]))
