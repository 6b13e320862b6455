"""Test-set metrics and loss histograms."""
from __future__ import annotations

import numpy as np

from .losses import Task
from .tail_measures import quantile


def compute_metrics(predictions, targets, task, p: float, losses=None) -> dict:
    """Score predictions against targets.

    For classification ``predictions`` are probabilities ``sigmoid(w @ x)``
    thresholded at 0.5. Precision treats the minority class *of the given
    targets* as positive (label 1 on a tie); with no positive predictions
    it is reported as 0 and ``precision_undefined`` is set. When per-point
    ``losses`` are supplied, their mean and the quantiles at 0.5, 0.9 and
    ``p`` are added; for regression they default to squared errors.
    """
    task = Task(task)
    pred = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(targets, dtype=np.float64).reshape(-1)
    if pred.shape != y.shape:
        raise ValueError("predictions and targets have different lengths")
    if pred.shape[0] == 0:
        raise ValueError("no predictions to score")
    out: dict = {"n": int(y.shape[0])}
    if task is Task.REGRESSION and losses is None:
        losses = (y - pred) ** 2
    if task is Task.BINARY_CLASSIFICATION:
        labels = (pred >= 0.5).astype(np.float64)
        out["accuracy"] = float(np.mean(labels == y))
        n1 = int(np.sum(y == 1.0))
        positive = 0.0 if (y.shape[0] - n1) < n1 else 1.0
        predicted_pos = labels == positive
        tp = int(np.sum(predicted_pos & (y == positive)))
        fp = int(np.sum(predicted_pos & (y != positive)))
        out["positive_class"] = int(positive)
        if tp + fp == 0:
            out["precision"] = 0.0
            out["precision_undefined"] = True
        else:
            out["precision"] = tp / (tp + fp)
            out["precision_undefined"] = False
    if losses is not None:
        losses = np.asarray(losses, dtype=np.float64)
        out["mean_loss"] = float(np.mean(losses))
        out["loss_q50"] = quantile(losses, 0.5)
        out["loss_q90"] = quantile(losses, 0.9)
        out["loss_qp"] = quantile(losses, p)
    return out


def histogram(values, bins: int = 30) -> dict:
    values = np.asarray(values, dtype=np.float64)
    counts, edges = np.histogram(values, bins=bins)
    return {"edges": edges.tolist(), "counts": counts.astype(int).tolist()}
