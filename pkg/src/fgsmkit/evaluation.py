"""Confusion matrices and classification reports.

Matrices are indexed ``counts[actual, predicted]``.
"""

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from . import nn
from .data import Dataset

METRICS = ("precision", "recall", "f1")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: tuple

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.class_names = tuple(self.class_names)
        k = len(self.class_names)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} does not match {k} classes")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["actual\\predicted", *self.class_names])
        for name, row in zip(self.class_names, self.counts):
            writer.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        names = rows[0][1:]
        return cls(np.array([[int(v) for v in r[1:]] for r in rows[1:]]), names)


def confusion_from_labels(actual, predicted, class_names) -> ConfusionMatrix:
    k = len(class_names)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (np.asarray(actual), np.asarray(predicted)), 1)
    return ConfusionMatrix(counts, class_names)


def confusion(model: nn.Model, dataset: Dataset) -> ConfusionMatrix:
    if model.n_classes != dataset.n_classes:
        raise ValueError(f"model predicts {model.n_classes} classes, dataset has {dataset.n_classes}")
    predicted = nn.predict(model, dataset.images).argmax(axis=1)
    return confusion_from_labels(dataset.labels, predicted, dataset.class_names)


def percent(rate: float) -> int:
    """100 * rate rounded half-up to an integer."""
    return int((Decimal(repr(float(rate))) * 100).quantize(Decimal(1), rounding=ROUND_HALF_UP))


@dataclass
class ClassReport:
    class_names: tuple
    precision: list
    recall: list
    f1: list
    support: list
    accuracy: float
    zero_division_flags: dict = field(default_factory=dict)

    def per_class(self, name) -> dict:
        i = self.class_names.index(name)
        return {"precision": self.precision[i], "recall": self.recall[i], "f1": self.f1[i], "support": self.support[i]}

    def percentages(self) -> dict:
        out = {name: {m: percent(getattr(self, m)[i]) for m in METRICS} for i, name in enumerate(self.class_names)}
        out["accuracy"] = percent(self.accuracy)
        return out

    def to_dict(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "classes": {
                name: {
                    "precision": round(self.precision[i], 6),
                    "recall": round(self.recall[i], 6),
                    "f1": round(self.f1[i], 6),
                    "support": self.support[i],
                }
                for i, name in enumerate(self.class_names)
            },
            "accuracy": round(self.accuracy, 6),
            "zero_division_flags": self.zero_division_flags,
            "percent": self.percentages(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d) -> "ClassReport":
        names = tuple(d["class_names"])
        rows = [d["classes"][n] for n in names]
        return cls(
            names,
            [r["precision"] for r in rows],
            [r["recall"] for r in rows],
            [r["f1"] for r in rows],
            [r["support"] for r in rows],
            d["accuracy"],
            d.get("zero_division_flags", {}),
        )


def accuracy(matrix: ConfusionMatrix) -> float:
    """Correct predictions (the diagonal) over all predictions."""
    total = matrix.total
    if total == 0:
        raise ValueError("empty confusion matrix")
    return int(np.trace(matrix.counts)) / total


def report(matrix: ConfusionMatrix) -> ClassReport:
    """Per-class precision/recall/f1/support.

    A zero denominator yields 0 for that metric and an entry in
    ``zero_division_flags`` (``{class_name: [metric, ...]}``).
    """
    counts = matrix.counts
    acc = accuracy(matrix)
    precision, recall, f1, support = [], [], [], []
    flags = {}
    for k, name in enumerate(matrix.class_names):
        tp = int(counts[k, k])
        col = int(counts[:, k].sum())
        row = int(counts[k, :].sum())
        bad = []
        p = tp / col if col else 0.0
        r = tp / row if row else 0.0
        if not col:
            bad.append("precision")
        if not row:
            bad.append("recall")
        if p + r > 0:
            f = 2 * p * r / (p + r)
        else:
            f = 0.0
            bad.append("f1")
        if bad:
            flags[name] = bad
        precision.append(p)
        recall.append(r)
        f1.append(f)
        support.append(row)
    return ClassReport(matrix.class_names, precision, recall, f1, support, acc, flags)


def compare_reports(before: ClassReport, after: ClassReport) -> dict:
    """Pair two reports; every ``delta`` is ``after - before``."""
    if before.class_names != after.class_names:
        raise ValueError(f"class sets differ: {before.class_names} vs {after.class_names}")
    out = {
        "accuracy": {"before": before.accuracy, "after": after.accuracy, "delta": after.accuracy - before.accuracy},
        "classes": {},
    }
    for i, name in enumerate(before.class_names):
        out["classes"][name] = {
            m: {"before": getattr(before, m)[i], "after": getattr(after, m)[i], "delta": getattr(after, m)[i] - getattr(before, m)[i]}
            for m in METRICS
        }
    return out


def comparison_to_json(comparison: dict) -> str:
    def rounded(obj):
        if isinstance(obj, dict):
            return {k: rounded(v) for k, v in obj.items()}
        return round(obj, 6)

    return json.dumps(rounded(comparison), indent=2) + "\n"
