"""Accuracy metrics, confusion matrices and multi-run summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class EvaluationError(ValueError):
    pass


@dataclass
class Metrics:
    overall_accuracy: float
    per_class_accuracy: list[float]
    confusion: np.ndarray  # [C, C] int, rows = truth, columns = prediction
    num_test: int
    empty_classes: list[int] = field(default_factory=list)  # no test samples; accuracy reported as 0

    @property
    def num_classes(self) -> int:
        return len(self.per_class_accuracy)

    def to_json(self) -> dict:
        return {"overall_accuracy": self.overall_accuracy,
                "per_class_accuracy": list(self.per_class_accuracy),
                "confusion": self.confusion.tolist(),
                "num_test": self.num_test,
                "empty_classes": list(self.empty_classes)}

    @classmethod
    def from_json(cls, doc: dict) -> "Metrics":
        return cls(float(doc["overall_accuracy"]), [float(a) for a in doc["per_class_accuracy"]],
                   np.array(doc["confusion"], dtype=np.int64), int(doc["num_test"]),
                   list(doc.get("empty_classes", [])))


def metrics_from_predictions(y_true, y_pred, num_classes: int) -> Metrics:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.size == 0:
        raise EvaluationError("cannot evaluate an empty test set")
    if y_true.shape != y_pred.shape:
        raise EvaluationError("y_true and y_pred differ in length")
    for name, arr in (("labels", y_true), ("predictions", y_pred)):
        if arr.min() < 0 or arr.max() >= num_classes:
            raise EvaluationError(f"{name} must lie in [0, {num_classes})")
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    rows = confusion.sum(axis=1)
    diag = np.diag(confusion)
    per_class = [float(d / r) if r else 0.0 for d, r in zip(diag, rows)]
    empty = [int(i) for i in np.flatnonzero(rows == 0)]
    return Metrics(float(diag.sum() / y_true.size), per_class, confusion, int(y_true.size), empty)


def evaluate(model, x, y, num_classes: int | None = None) -> Metrics:
    """Metrics for a fitted linear head (anything with ``predict_batch`` semantics)."""
    from .classify import predict_batch

    x = np.asarray(x)
    if len(x) == 0:
        raise EvaluationError("cannot evaluate an empty test set")
    pred, _ = predict_batch(model, x)
    return metrics_from_predictions(y, pred, num_classes or model.num_classes)


@dataclass
class RunSummary:
    per_run_accuracy: list[float]
    seeds: list[int]
    per_class_mean: list[float] = field(default_factory=list)
    label: str = ""

    def __post_init__(self):
        if len(self.per_run_accuracy) != len(self.seeds):
            raise EvaluationError("one seed per run is required")
        if not self.per_run_accuracy:
            raise EvaluationError("a summary needs at least one run")

    @property
    def mean(self) -> float:
        return float(math.fsum(self.per_run_accuracy) / len(self.per_run_accuracy))

    @property
    def std(self) -> float:
        """Sample standard deviation (n - 1 denominator); 0 for a single run."""
        n = len(self.per_run_accuracy)
        if n < 2:
            return 0.0
        m = self.mean
        return math.sqrt(math.fsum((a - m) ** 2 for a in self.per_run_accuracy) / (n - 1))

    @property
    def overall_accuracy(self) -> float:
        return self.mean

    @property
    def per_class_accuracy(self) -> list[float]:
        return self.per_class_mean

    def to_json(self) -> dict:
        return {"label": self.label, "mean": self.mean, "std": self.std,
                "per_run_accuracy": list(self.per_run_accuracy), "seeds": list(self.seeds),
                "per_class_mean_accuracy": list(self.per_class_mean)}


def summarize(metrics: list[Metrics], seeds: list[int], label: str = "") -> RunSummary:
    """Aggregate per-run metrics.

    Per-class accuracies are averaged over the runs whose test split contains
    that class; a class absent from every run reports 0.
    """
    if not metrics:
        return RunSummary([], list(seeds), [], label)
    acc = np.array([m.per_class_accuracy for m in metrics], dtype=np.float64)
    present = np.ones_like(acc, dtype=bool)
    for r, m in enumerate(metrics):
        present[r, list(m.empty_classes)] = False
    counts = present.sum(axis=0)
    per_class = np.where(counts > 0, (acc * present).sum(axis=0) / np.maximum(counts, 1), 0.0)
    return RunSummary([m.overall_accuracy for m in metrics], list(seeds),
                      [float(a) for a in per_class], label)
