from __future__ import annotations

import numpy as np

HIGHER_IS_BETTER = {"accuracy": True, "f1": True, "mse": False}


def accuracy(pred, ref) -> float:
    pred, ref = np.asarray(pred), np.asarray(ref)
    return float(np.mean(pred == ref))


def f1_score(pred, ref, positive: int = 1) -> float:
    pred, ref = np.asarray(pred), np.asarray(ref)
    tp = np.sum((pred == positive) & (ref == positive))
    fp = np.sum((pred == positive) & (ref != positive))
    fn = np.sum((pred != positive) & (ref == positive))
    if tp == 0:
        return 0.0
    return float(2 * tp / (2 * tp + fp + fn))


def mse(pred, ref, mask=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        pred, ref = pred[mask], ref[mask]
    if pred.size == 0:
        raise ValueError("no frames to score")
    return float(np.mean((pred - ref) ** 2))


def compute_metric(predictions, references, kind: str, mask=None) -> float:
    """``kind`` is one of accuracy, f1 (positive class 1), mse (optionally masked)."""
    if len(predictions) == 0 or len(references) == 0:
        raise ValueError("empty inputs")
    if len(predictions) != len(references):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(references)} references")
    kind = kind.lower()
    if kind == "accuracy":
        return accuracy(predictions, references)
    if kind == "f1":
        return f1_score(predictions, references)
    if kind == "mse":
        return mse(predictions, references, mask)
    raise ValueError(f"unknown metric {kind!r}")
