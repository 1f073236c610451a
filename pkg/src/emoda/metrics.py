"""Unweighted average recall, confusion matrices and multi-run aggregation."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .data import EMOTIONS
from .errors import ContractError
from .model import predict_logits

CSV_COLUMNS = ["experiment", "mode", "run", "uar"] + [f"recall_{e.lower()}" for e in EMOTIONS]


@dataclass
class RunMetrics:
    confusion: np.ndarray  # rows = true class, columns = predicted class
    per_class_recall: np.ndarray  # NaN for classes without support
    uar: float
    unsupported: list = field(default_factory=list)

    def to_dict(self):
        return {
            "uar": self.uar,
            "per_class_recall": [None if np.isnan(r) else float(r) for r in self.per_class_recall],
            "confusion": self.confusion.tolist(),
            "unsupported_classes": list(self.unsupported),
        }

    @classmethod
    def from_dict(cls, d):
        recall = np.array([np.nan if r is None else r for r in d["per_class_recall"]], dtype=float)
        return cls(np.array(d["confusion"], dtype=np.int64), recall, float(d["uar"]), list(d["unsupported_classes"]))


def predict(logits):
    """Argmax over the last axis; ties go to the lowest class index."""
    return np.argmax(np.asarray(logits), axis=-1)


def run_metrics(y_true, y_pred, num_classes=len(EMOTIONS)):
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise ContractError("cannot score an empty evaluation set")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    support = confusion.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, np.diag(confusion) / support, np.nan)
    present = support > 0
    return RunMetrics(confusion, recall, float(recall[present].mean()), np.flatnonzero(~present).tolist())


def evaluate(model, eval_set):
    """Evaluation-mode predictions of ``model`` on ``eval_set``, scored by UAR."""
    if not eval_set:
        raise ContractError("cannot evaluate on an empty set")
    logits = predict_logits(model, eval_set)
    return run_metrics([s.emotion for s in eval_set], predict(logits), model.config.num_emotions)


@dataclass
class AggregateMetrics:
    mean_uar: float
    std_uar: float  # sample standard deviation (n - 1); 0 for a single run
    runs: list

    def to_dict(self):
        return {"mean_uar": self.mean_uar, "std_uar": self.std_uar, "runs": [r.to_dict() for r in self.runs]}


def aggregate(runs):
    if not runs:
        raise ContractError("aggregate needs at least one run")
    uars = np.array([r.uar for r in runs])
    std = float(np.std(uars, ddof=1)) if len(uars) > 1 else 0.0
    return AggregateMetrics(float(np.mean(uars)), std, list(runs))


def write_run_json(path, metrics, **extra):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({**extra, **metrics.to_dict()}, fh, indent=2)
        fh.write("\n")


def write_summary_csv(path, rows):
    """``rows`` are ``(experiment, mode, run, RunMetrics)`` tuples."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for experiment, mode, run, m in rows:
            writer.writerow([experiment, mode, run, repr(m.uar)] + [repr(float(r)) for r in m.per_class_recall])
