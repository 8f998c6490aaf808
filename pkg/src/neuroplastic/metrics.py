"""Confusion-matrix metrics and the paired-sample t-test."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows = actual, cols = predicted

    @property
    def n_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion_from_pairs(actual: Sequence[int], predicted: Sequence[int], n_classes: int) -> ConfusionMatrix:
    a = np.asarray(actual, dtype=np.int64).reshape(-1)
    p = np.asarray(predicted, dtype=np.int64).reshape(-1)
    if a.shape != p.shape:
        raise ValueError(f"{a.size} actual labels but {p.size} predictions")
    for name, arr in (("actual", a), ("predicted", p)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise IndexError(f"{name} label out of range [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (a, p), 1)
    return ConfusionMatrix(counts)


@dataclass
class ClassMetrics:
    label: int
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class ClassificationReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list[ClassMetrics]
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro": {"precision": self.macro_precision, "recall": self.macro_recall, "f1": self.macro_f1},
            "per_class": [
                {"label": c.label, "precision": c.precision, "recall": c.recall, "f1": c.f1, "support": c.support}
                for c in self.per_class
            ],
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ClassificationReport":
        return cls(
            accuracy=obj["accuracy"],
            macro_precision=obj["macro"]["precision"],
            macro_recall=obj["macro"]["recall"],
            macro_f1=obj["macro"]["f1"],
            per_class=[ClassMetrics(**c) for c in obj["per_class"]],
            warnings=list(obj["warnings"]),
        )


def report_from_confusion(m: ConfusionMatrix) -> ClassificationReport:
    """Per-class and macro precision/recall/F1 plus accuracy.

    A class whose precision or recall has a zero denominator scores 0 for
    that rate and adds a warning.
    """
    counts = m.counts
    total = int(counts.sum())
    if total < 1:
        raise ValueError("cannot report on an empty confusion matrix")
    tp = np.diag(counts)
    predicted = counts.sum(axis=0)
    actual = counts.sum(axis=1)
    warnings: list[str] = []
    per_class: list[ClassMetrics] = []
    for c in range(m.n_classes):
        if predicted[c] == 0:
            prec = 0.0
            warnings.append(f"class {c}: no predictions, precision set to 0")
        else:
            prec = int(tp[c]) / int(predicted[c])
        if actual[c] == 0:
            rec = 0.0
            warnings.append(f"class {c}: no samples, recall set to 0")
        else:
            rec = int(tp[c]) / int(actual[c])
        f1 = 2.0 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
        per_class.append(ClassMetrics(c, prec, rec, f1, int(actual[c])))
    n = len(per_class)
    return ClassificationReport(
        accuracy=int(tp.sum()) / total,
        macro_precision=sum(c.precision for c in per_class) / n,
        macro_recall=sum(c.recall for c in per_class) / n,
        macro_f1=sum(c.f1 for c in per_class) / n,
        per_class=per_class,
        warnings=warnings,
    )


def report_to_json(report: ClassificationReport) -> str:
    # json writes floats via repr, which round-trips exactly
    return json.dumps(report.to_dict(), indent=2)


def report_from_json(text: str) -> ClassificationReport:
    return ClassificationReport.from_dict(json.loads(text))


REPORT_SCHEMA = {
    "type": "object",
    "required": ["accuracy", "macro", "per_class", "warnings"],
    "properties": {
        "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
        "macro": {
            "type": "object",
            "required": ["precision", "recall", "f1"],
            "properties": {k: {"type": "number", "minimum": 0, "maximum": 1} for k in ("precision", "recall", "f1")},
        },
        "per_class": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label", "precision", "recall", "f1", "support"],
                "properties": {
                    "label": {"type": "integer", "minimum": 0},
                    "precision": {"type": "number", "minimum": 0, "maximum": 1},
                    "recall": {"type": "number", "minimum": 0, "maximum": 1},
                    "f1": {"type": "number", "minimum": 0, "maximum": 1},
                    "support": {"type": "integer", "minimum": 0},
                },
            },
        },
        "warnings": {"type": "array", "items": {"type": "string"}},
    },
}


@dataclass(frozen=True)
class PairedTTestResult:
    n: int
    mean_diff: float
    sd: float
    se: float
    t: float
    df: int
    p_value: float


def t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t via the incomplete beta."""
    if df < 1:
        raise ValueError("df must be >= 1")
    return float(betainc(df / 2.0, 0.5, df / (df + t * t)))


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> PairedTTestResult:
    a_arr = np.asarray(a, dtype=np.float64).reshape(-1)
    b_arr = np.asarray(b, dtype=np.float64).reshape(-1)
    if a_arr.shape != b_arr.shape:
        raise ValueError(f"paired samples differ in length: {a_arr.size} vs {b_arr.size}")
    n = a_arr.size
    if n < 2:
        raise ValueError(f"paired t-test needs n >= 2, got {n}")
    d = a_arr - b_arr
    mean = float(d.mean())
    sd = float(math.sqrt(((d - mean) ** 2).sum() / (n - 1)))
    if sd == 0.0:
        raise ValueError("differences have zero variance; t statistic undefined")
    se = sd / math.sqrt(n)
    t = mean / se
    return PairedTTestResult(n, mean, sd, se, t, n - 1, t_two_sided_p(t, n - 1))
