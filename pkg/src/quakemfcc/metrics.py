"""Binary classification metrics: confusion matrix, accuracy, Cohen's kappa."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def confusion_matrix(y_true, y_pred) -> np.ndarray:
    """2x2 counts, rows = true class, columns = predicted class (0, 1)."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError("y_true and y_pred differ in shape")
    if np.any((y_true < 0) | (y_true > 1) | (y_pred < 0) | (y_pred > 1)):
        raise ValueError("labels must be 0 or 1")
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def accuracy(cm) -> float:
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm) / total)


def cohen_kappa(cm) -> float:
    """(p_o - p_e) / (1 - p_e) with p_e from the product of the marginals."""
    cm = np.asarray(cm, dtype=np.float64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    p_o = np.trace(cm) / total
    p_e = float(np.sum(cm.sum(axis=1) * cm.sum(axis=0))) / total ** 2
    if p_e == 1.0:
        # both raters put everything in one class: agreement is total but uninformative
        return 1.0 if p_o == 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


@dataclass
class MetricsReport:
    confusion: np.ndarray
    accuracy: float
    cohen_kappa: float
    precision: list
    recall: list
    config: dict = field(default_factory=dict)

    @classmethod
    def from_predictions(cls, y_true, y_pred, config=None) -> "MetricsReport":
        cm = confusion_matrix(y_true, y_pred)
        if cm.sum() == 0:
            raise ValueError("no predictions to evaluate")
        col = cm.sum(axis=0)
        row = cm.sum(axis=1)
        precision = [float(cm[k, k] / col[k]) if col[k] else float("nan") for k in (0, 1)]
        recall = [float(cm[k, k] / row[k]) if row[k] else float("nan") for k in (0, 1)]
        return cls(cm, accuracy(cm), cohen_kappa(cm), precision, recall, dict(config or {}))

    def as_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "accuracy": self.accuracy,
            "cohen_kappa": self.cohen_kappa,
            "precision": {"non_earthquake": self.precision[0], "earthquake": self.precision[1]},
            "recall": {"non_earthquake": self.recall[0], "earthquake": self.recall[1]},
            "config": self.config,
        }
