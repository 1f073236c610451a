"""
Training objectives and the softlabel table.

All batch losses are mean-reduced.  The domain confusion term is the mean
entropy of the domain classifier's posterior; the total loss subtracts it, so
minimising the total with respect to the encoder maximises domain confusion.
"""

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, LabelError, MissingClassError, ParameterError
from .model import emotion_logits, encode_batch

EMOTION_NAMES = ("Angry", "Sad", "Happy", "Neutral")


def _labels(labels, n_classes, batch):
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.shape[0] != batch:
        raise LabelError(f"{labels.shape[0]} labels for a batch of {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got {sorted(set(labels.tolist()))}")
    return labels


def _cross_entropy(logits, labels, temperature=1.0):
    if logits.ndim != 2:
        raise ContractError(f"expected [B, K] logits, got {logits.shape}")
    labels = _labels(labels, logits.shape[1], logits.shape[0])
    logp = T.log_softmax(logits, temperature)
    picked = logp[np.arange(len(labels)), labels]
    return -T.mean(picked)


def domain_ce_loss(domain_logits_batch, domain_labels):
    """Domain classifier cross-entropy, mean of -log P(d | enc(x))."""
    return _cross_entropy(domain_logits_batch, domain_labels)


def confusion_entropy(domain_logits_batch):
    """Mean entropy of the domain posterior; ln(num_domains) at uniform posteriors."""
    if domain_logits_batch.ndim != 2 or domain_logits_batch.shape[0] < 1:
        raise ContractError(f"expected non-empty [B, D] logits, got {domain_logits_batch.shape}")
    logp = T.log_softmax(domain_logits_batch)
    return -T.mean(T.sum_(T.exp(logp) * logp, axis=1))


def emotion_ce_loss(emotion_logits_batch, labels):
    return _cross_entropy(emotion_logits_batch, labels)


@dataclass
class SoftLabelTable:
    """Row k is the mean temperature-softened EC posterior of source samples of class k."""

    table: np.ndarray
    temperature: float
    source_model_id: str = ""

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        k = self.table.shape[0]
        if self.table.shape != (k, k):
            raise ContractError(f"softlabel table must be square, got {self.table.shape}")
        if np.any(self.table < 0) or np.any(np.abs(self.table.sum(axis=1) - 1.0) > 1e-9):
            raise ContractError("softlabel table rows must be nonnegative and sum to 1")
        if not self.temperature > 0:
            raise ParameterError(f"temperature must be positive, got {self.temperature}")

    @property
    def num_classes(self):
        return self.table.shape[0]

    def dumps(self):
        header = f"softlabel v1 K={self.num_classes} tau={self.temperature!r}"
        if self.source_model_id:
            header += f" source={self.source_model_id}"
        rows = [" ".join(repr(float(v)) for v in row) for row in self.table]
        return "\n".join([header, *rows]) + "\n"

    @classmethod
    def loads(cls, text):
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = lines[0].split()
        if head[:2] != ["softlabel", "v1"]:
            raise ContractError(f"not a softlabel v1 table: {lines[0]!r}")
        meta = dict(tok.split("=", 1) for tok in head[2:])
        k = int(meta["K"])
        rows = [[float(v) for v in ln.split()] for ln in lines[1:1 + k]]
        if len(rows) != k or any(len(r) != k for r in rows):
            raise ContractError(f"softlabel table body is not {k}x{k}")
        return cls(np.array(rows), float(meta["tau"]), meta.get("source", ""))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def build_softlabel_table(source_model, source_train, tau, batch_size=256):
    """Average the temperature-``tau`` EC posterior of source samples per emotion class."""
    if not source_train:
        raise ContractError("source_train is empty")
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")
    k = source_model.config.num_emotions
    labels = np.array([s.emotion for s in source_train])
    sums = np.zeros((k, k))
    with T.no_grad():
        for i in range(0, len(source_train), batch_size):
            chunk = source_train[i:i + batch_size]
            probs = T.softmax(emotion_logits(source_model, encode_batch(source_model, chunk)), tau).data
            np.add.at(sums, labels[i:i + batch_size], probs)
    counts = np.bincount(labels, minlength=k)
    for c in range(k):
        if counts[c] == 0:
            raise MissingClassError(c, EMOTION_NAMES[c] if k == len(EMOTION_NAMES) else None)
    rows = sums / counts[:, None]
    rows /= rows.sum(axis=1, keepdims=True)
    return SoftLabelTable(rows, float(tau), source_model.fingerprint())


def softlabel_loss(emotion_logits_batch, target_labels, table, domains=None):
    """Mean of -sum_i l_i^(y) log P_i with P at the table's temperature; target samples only."""
    if domains is not None and np.any(np.asarray(domains) != 1):
        raise ContractError("softlabel loss only applies to target-domain samples")
    labels = _labels(target_labels, table.num_classes, emotion_logits_batch.shape[0])
    logp = T.log_softmax(emotion_logits_batch, table.temperature)
    soft = table.table[labels]
    return -T.mean(T.sum_(logp * soft, axis=1))


@dataclass
class LossWeights:
    lambda_conf: float = 1.0
    lambda_soft: float = 0.1

    def __post_init__(self):
        for name in ("lambda_conf", "lambda_soft"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and nonnegative, got {v}")


def total_loss(emo, conf, soft, w):
    """L_emo - lambda_conf * L_conf (+ lambda_soft * L_soft when ``soft`` is given)."""
    out = emo if conf is None else emo - w.lambda_conf * conf
    if soft is not None:
        out = out + w.lambda_soft * soft
    return out
