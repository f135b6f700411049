"""Confusion matrices and unweighted average recall."""

from __future__ import annotations

import numpy as np


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    """Counts with true classes as rows and predictions as columns."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def compute_uar(confusion) -> float:
    """Mean of per-class recalls.

    Raises:
        ValueError: some true class has no samples.
    """
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError(f"confusion matrix must be square, got shape {cm.shape}")
    totals = cm.sum(axis=1)
    if np.any(totals == 0):
        empty = [int(i) for i in np.flatnonzero(totals == 0)]
        raise ValueError(f"true class row(s) {empty} have no samples")
    return float(np.mean(np.diag(cm) / totals))


def uar(y_true, y_pred, n_classes: int = 3) -> float:
    return compute_uar(confusion_matrix(y_true, y_pred, n_classes))
