"""Evaluation metrics and k-fold cross-validation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateLabels, EmptyDataset, InvalidFoldCount, ShapeMismatch


def auc(labels, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney rank sum (ties count 1/2)."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape:
        raise ShapeMismatch("labels and scores differ in length")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def rmse(labels, predictions) -> float:
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    if y.shape[0] == 0:
        raise EmptyDataset("rmse of empty input")
    if y.shape != p.shape:
        raise ShapeMismatch("labels and predictions differ in length")
    return math.sqrt(float(np.mean((y - p) ** 2)))


@dataclass(frozen=True)
class FoldAssignment:
    n_rows: int
    k: int
    fold_of: np.ndarray

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        """(train rows, held-out rows) for ``fold``."""
        held = self.fold_of == fold
        return np.flatnonzero(~held), np.flatnonzero(held)


def kfold_split(n_rows: int, k: int, seed: int = 0) -> FoldAssignment:
    if k < 2 or k > n_rows:
        raise InvalidFoldCount(f"k={k} with {n_rows} rows")
    perm = np.random.default_rng(seed).permutation(n_rows)
    fold_of = np.empty(n_rows, dtype=np.int64)
    for fold, block in enumerate(np.array_split(perm, k)):
        fold_of[block] = fold
    return FoldAssignment(n_rows, k, fold_of)


def metric_for(objective: str):
    """Reported metric name and function for a training objective."""
    return ("auc", auc) if objective == "logloss" else ("rmse", rmse)


def cross_validate(config, data, k: int, merges=(), seed: int | None = None, callback=None):
    """Train ``k`` independent models; returns ``(metric_name, per_fold_values)``."""
    from .boosting import predict, train

    folds = kfold_split(data.n_rows, k, config.seed if seed is None else seed)
    name, fn = metric_for(config.objective)
    scores = []
    y = data.labels.values
    for fold in range(k):
        tr, te = folds.split(fold)
        cb = None if callback is None else (lambda t, tl, vl, f=fold: callback(f, t, tl, vl))
        model = train(config, data, merges=merges, train_rows=tr, valid_rows=te, callback=cb)
        scores.append(fn(y[te], predict(model, data, merges, rows=te)))
    return name, scores
