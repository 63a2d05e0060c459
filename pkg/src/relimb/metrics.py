"""Imbalance-aware evaluation metrics.

Balanced accuracy is the mean of per-class recalls; G-Mean is their
geometric mean. A recall whose class is absent from the split is defined
as 0 and flagged.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

__all__ = ["ConfusionMatrix", "MetricsReport", "balanced_accuracy", "g_mean",
           "confusion_from_predictions"]


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def degenerate(self) -> bool:
        """True when a class is absent, so one recall term is defined as 0."""
        return self.positives == 0 or self.negatives == 0

    def recall_pos(self) -> float:
        return self.tp / self.positives if self.positives else 0.0

    def recall_neg(self) -> float:
        return self.tn / self.negatives if self.negatives else 0.0


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    return 0.5 * (cm.recall_pos() + cm.recall_neg())


def g_mean(cm: ConfusionMatrix) -> float:
    return math.sqrt(cm.recall_pos() * cm.recall_neg())


def confusion_from_predictions(y_true, y_pred) -> ConfusionMatrix:
    tp = fn = tn = fp = 0
    for t, p in zip(y_true, y_pred):
        if t == 1:
            if p == 1:
                tp += 1
            else:
                fn += 1
        else:
            if p == 1:
                fp += 1
            else:
                tn += 1
    return ConfusionMatrix(tp, fn, tn, fp)


@dataclass
class MetricsReport:
    epoch: int
    split: str
    cm: ConfusionMatrix
    loss_cls: float = 0.0
    loss_syn: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def b_acc(self) -> float:
        return balanced_accuracy(self.cm)

    @property
    def g_mean(self) -> float:
        return g_mean(self.cm)

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "split": self.split,
            "tp": self.cm.tp,
            "fn": self.cm.fn,
            "tn": self.cm.tn,
            "fp": self.cm.fp,
            "b_acc": self.b_acc,
            "g_mean": self.g_mean,
            "loss_cls": self.loss_cls,
            "loss_syn": self.loss_syn,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


CSV_FIELDS = ["epoch", "split", "tp", "fn", "tn", "fp", "b_acc", "g_mean",
              "loss_cls", "loss_syn"]


def reports_to_csv(reports: list[MetricsReport], path: str) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in reports:
            writer.writerow(r.to_dict())
