"""Label bucketing, F1/Pearson metrics and stratified k-fold splitting."""

from __future__ import annotations

import math

import numpy as np


class MetricError(Exception):
    pass


class OutOfRange(MetricError):
    pass


class LengthMismatch(MetricError):
    pass


class TooFewSamples(MetricError):
    pass


LABEL_NAMES = {0: "Low", 1: "Medium", 2: "High"}


def bucket_score(score: int) -> int:
    """0-10 rating to a 3-way class: 0-5 Low, 6-7 Medium, 8-10 High."""
    if not 0 <= score <= 10:
        raise OutOfRange(f"score must be in [0, 10], got {score}")
    if score <= 5:
        return 0
    if score <= 7:
        return 1
    return 2


def confusion_matrix(preds, labels, n_classes: int = 3) -> np.ndarray:
    """Rows are true classes, columns predictions."""
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} preds vs {len(labels)} labels")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for p, y in zip(preds, labels):
        cm[int(y), int(p)] += 1
    return cm


def _per_class_f1(preds, labels, n_classes: int) -> tuple[list[float], list[bool]]:
    cm = confusion_matrix(preds, labels, n_classes)
    f1s, present = [], []
    for c in range(n_classes):
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = cm[c, :].sum() - tp
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
        f1s.append(float(f1))
        present.append(bool(cm[c, :].sum() > 0 or cm[:, c].sum() > 0))
    return f1s, present


def macro_f1(preds, labels, n_classes: int = 3) -> float:
    """Unweighted mean of per-class F1.

    Classes absent from both predictions and labels are excluded; a class
    predicted but never true contributes F1 = 0.
    """
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} preds vs {len(labels)} labels")
    if len(labels) == 0:
        raise LengthMismatch("empty inputs")
    f1s, present = _per_class_f1(preds, labels, n_classes)
    used = [f for f, p in zip(f1s, present) if p]
    return float(np.mean(used)) if used else 0.0


def micro_f1(preds, labels) -> float:
    """Overall accuracy (micro-averaged F1 for single-label classification)."""
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} preds vs {len(labels)} labels")
    return float(np.mean([int(p) == int(y) for p, y in zip(preds, labels)]))


def pearson(preds, labels) -> float | None:
    """Sample Pearson correlation on ordinal class values.

    Returns None (serialized as null) when either sequence is constant.
    """
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} preds vs {len(labels)} labels")
    if len(preds) < 2:
        raise TooFewSamples("need at least 2 points")
    x = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        return None
    return float((dx @ dy) / (sx * sy))


def kfold_split(labels, k: int = 5, seed: int = 0) -> list[tuple[list[int], list[int]]]:
    """Stratified k-fold: per-class counts across folds differ by at most 1.

    Returns (train_indices, test_indices) per fold, deterministic in seed.
    """
    n = len(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise TooFewSamples(f"{n} samples for {k} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=np.int64)
    cursor = 0  # continues across classes so fold totals stay balanced
    for cls in sorted(set(int(l) for l in labels)):
        idx = [i for i, l in enumerate(labels) if int(l) == cls]
        idx = [idx[j] for j in rng.permutation(len(idx))]
        for pos, i in enumerate(idx):
            fold_of[i] = (cursor + pos) % k
        cursor = (cursor + len(idx)) % k
    folds = []
    for f in range(k):
        test = [i for i in range(n) if fold_of[i] == f]
        train = [i for i in range(n) if fold_of[i] != f]
        folds.append((train, test))
    return folds
