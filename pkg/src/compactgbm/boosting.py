"""Objectives and the stagewise additive training loop."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .binning import (
    BIN_CACHE,
    DEFAULT_T_SPLIT,
    MAX_BINS,
    ZERO_COPY,
    BinMapper,
    BinnedColumn,
    adaptive_resize,
    construct_bins,
    resize_due,
)
from .columnar import Dataset, Session
from .errors import (
    ConfigError,
    DivergenceDetected,
    EmptyDataset,
    InvalidLabel,
    SchemaMismatch,
    ResizeNoop,
)
from .merge import MergedFeature, SideTable, build_join_index
from .tree import SplitConfig, Tree, grow_tree

PROB_CLAMP = 1e-6


class MSE:
    name = "mse"

    @staticmethod
    def loss(y, s):
        return 0.5 * (y - s) ** 2

    @staticmethod
    def gradients(y, s, g=None, h=None):
        g = np.subtract(s, y, out=g)
        if h is None:
            h = np.ones_like(g)
        else:
            h.fill(1.0)
        return g, h

    @staticmethod
    def initial_score(y) -> float:
        return float(np.mean(y))

    @staticmethod
    def metric(y, s) -> float:
        """RMSE."""
        return math.sqrt(float(np.mean((y - s) ** 2)))

    @staticmethod
    def check_labels(y) -> None:
        if not np.isfinite(y).all():
            raise InvalidLabel("labels must be finite")


class LogLoss:
    """Binary cross-entropy on raw additive scores."""

    name = "logloss"

    @staticmethod
    def loss(y, s):
        return np.logaddexp(0.0, s) - y * s

    @staticmethod
    def gradients(y, s, g=None, h=None):
        p = sigmoid(s)
        g = np.subtract(p, y, out=g)
        h = np.multiply(p, 1.0 - p, out=h)
        return g, h

    @staticmethod
    def initial_score(y) -> float:
        rate = min(max(float(np.mean(y)), PROB_CLAMP), 1.0 - PROB_CLAMP)
        return math.log(rate / (1.0 - rate))

    @staticmethod
    def metric(y, s) -> float:
        """Mean log loss."""
        return float(np.mean(LogLoss.loss(y, s)))

    @staticmethod
    def check_labels(y) -> None:
        if not np.isin(y, (0.0, 1.0)).all():
            raise InvalidLabel("logloss labels must be 0 or 1")


OBJECTIVES = {"mse": MSE, "logloss": LogLoss}


def sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(s, dtype=np.float64)))


def get_objective(name):
    if not isinstance(name, str):
        return name
    try:
        return OBJECTIVES[name]
    except KeyError:
        raise ConfigError(f"unknown objective {name!r}") from None


def compute_gradients(objective, labels, predictions, g=None, h=None):
    """Per-row first and second derivatives of the loss at ``predictions``."""
    objective = get_objective(objective)
    labels = np.asarray(labels, dtype=np.float64)
    predictions = np.asarray(predictions, dtype=np.float64)
    if labels.shape != predictions.shape:
        raise ConfigError("labels and predictions differ in length")
    objective.check_labels(labels)
    return objective.gradients(labels, predictions, g, h)


def initial_score(objective, labels) -> float:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] == 0:
        raise EmptyDataset("no labels")
    objective = get_objective(objective)
    objective.check_labels(labels)
    return objective.initial_score(labels)


@dataclass
class BoosterConfig:
    num_trees: int = 100
    learning_rate: float = 0.1
    max_leaves: int = 31
    max_bins: int = MAX_BINS
    min_data_in_leaf: int = 20
    min_split_gain: float = 0.0
    t_split: int = DEFAULT_T_SPLIT
    adaptive_bins: bool = False
    objective: str = "mse"
    seed: int = 0
    early_stopping_rounds: int | None = None
    binning_mode: str = BIN_CACHE

    def validate(self) -> "BoosterConfig":
        if self.num_trees < 1:
            raise ConfigError(f"num_trees must be >= 1, got {self.num_trees}")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not 2 <= self.max_bins <= MAX_BINS:
            raise ConfigError(f"max_bins must be in [2, {MAX_BINS}], got {self.max_bins}")
        if self.max_leaves < 1:
            raise ConfigError(f"max_leaves must be >= 1, got {self.max_leaves}")
        if self.min_data_in_leaf < 0 or self.min_split_gain < 0 or self.t_split < 0:
            raise ConfigError("min_data_in_leaf, min_split_gain and t_split must be non-negative")
        if self.early_stopping_rounds is not None and self.early_stopping_rounds < 1:
            raise ConfigError("early_stopping_rounds must be >= 1")
        if self.binning_mode not in (BIN_CACHE, ZERO_COPY):
            raise ConfigError(f"binning_mode must be {BIN_CACHE!r} or {ZERO_COPY!r}")
        get_objective(self.objective)
        return self


@dataclass
class Model:
    base_score: float
    trees: list[Tree]
    learning_rate: float
    objective: str
    feature_names: list[str]
    bin_boundaries: list[list[float]] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    valid_loss: list[float] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def truncated(self, n_trees: int) -> "Model":
        return Model(self.base_score, self.trees[:n_trees], self.learning_rate, self.objective,
                     self.feature_names, self.bin_boundaries, self.train_loss, self.valid_loss,
                     dict(self.metadata))


@dataclass(frozen=True)
class MergeSpec:
    """Attach ``side`` to the main table through main column ``key``."""

    side: SideTable
    key: str
    features: tuple[str, ...] | None = None

    def feature_names(self) -> list[str]:
        return list(self.features) if self.features is not None else list(self.side.feature_names)


def _raw_columns(feature_names, data: Dataset, merges: Sequence[MergeSpec], session=None):
    """Raw-value accessors for ``feature_names`` drawn from ``data`` and merges."""
    available = {name: col.values for name, col in zip(data.feature_names, data.columns)}
    for spec in merges:
        if spec.key not in available:
            raise SchemaMismatch(f"merge key column {spec.key!r} missing")
        join = build_join_index(data.column(spec.key), spec.side, session)
        for name in spec.feature_names():
            available[name] = _VirtualColumn(spec.side, spec.side.feature_index(name), join)
    missing = [n for n in feature_names if n not in available]
    if missing:
        raise SchemaMismatch(f"data lacks model features {missing}")
    return [available[n] for n in feature_names]


class _VirtualColumn:
    __slots__ = ("values", "ordinals")

    def __init__(self, side, j, join):
        self.values = side.columns[j].values
        self.ordinals = join.ordinals

    def __getitem__(self, rows):
        o = self.ordinals[rows]
        return np.where(o < 0, np.nan, self.values[np.maximum(o, 0)])


def predict(model: Model, data: Dataset, merges: Sequence[MergeSpec] = (),
            rows: np.ndarray | None = None, n_trees: int | None = None) -> np.ndarray:
    """Raw additive scores ``base + sum(lr * tree(x))``."""
    columns = _raw_columns(model.feature_names, data, merges)
    if rows is not None:
        columns = [_Rows(c, rows) for c in columns]
        n = rows.shape[0]
    else:
        n = data.n_rows
    out = np.full(n, model.base_score, dtype=np.float64)
    for tree in model.trees[:n_trees]:
        out += model.learning_rate * tree.predict(columns, n)
    return out


def predict_proba(model: Model, data: Dataset, merges: Sequence[MergeSpec] = (),
                  rows: np.ndarray | None = None) -> np.ndarray:
    return sigmoid(predict(model, data, merges, rows))


class _Rows:
    __slots__ = ("col", "rows")

    def __init__(self, col, rows):
        self.col, self.rows = col, rows

    def __getitem__(self, idx):
        return self.col[self.rows[idx]]


LossCallback = Callable[[int, float, "float | None"], None]


def train(config: BoosterConfig, data: Dataset, valid: Dataset | None = None,
          merges: Sequence[MergeSpec] = (), mappers: Mapping[str, BinMapper] | None = None,
          session: Session | None = None, train_rows: np.ndarray | None = None,
          valid_rows: np.ndarray | None = None, callback: LossCallback | None = None) -> Model:
    """Fit a boosted ensemble.

    ``mappers`` pins the bin boundaries for named features (copied, never
    mutated). ``train_rows``/``valid_rows`` restrict training and validation
    to row subsets of ``data``/``valid`` (``valid`` defaults to ``data`` when
    only ``valid_rows`` is given). ``callback(t, train_loss, valid_loss)``
    runs once for the initial score (``t == 0``) and after every tree.
    """
    config.validate()
    objective = get_objective(config.objective)
    session = session if session is not None else Session()
    if data.labels is None:
        raise SchemaMismatch("training data has no labels")
    n = data.n_rows
    rows = np.arange(n, dtype=np.int64) if train_rows is None else np.asarray(train_rows, dtype=np.int64)
    if rows.shape[0] == 0:
        raise EmptyDataset("no training rows")
    y_all = data.labels.values
    y = y_all[rows] if train_rows is not None else y_all
    objective.check_labels(y)
    mappers = dict(mappers or {})

    features: list = []
    names: list[str] = []
    for j, (name, col) in enumerate(zip(data.feature_names, data.columns)):
        mapper = mappers[name].copy() if name in mappers else construct_bins(col, config.max_bins, j, train_rows)
        mapper.feature_id = j
        features.append(BinnedColumn(col, mapper, config.binning_mode, session))
        names.append(name)
    for spec in merges:
        if spec.key not in data.feature_names:
            raise SchemaMismatch(f"merge key column {spec.key!r} missing")
        join = build_join_index(data.column(spec.key), spec.side, session)
        for name in spec.feature_names():
            if name in names:
                raise SchemaMismatch(f"duplicate feature name {name!r}")
            merged = MergedFeature(spec.side, name, join, session, mappers.get(name), train_rows)
            merged.mapper.feature_id = len(features)
            features.append(merged)
            names.append(name)

    base = objective.initial_score(y)
    pred = np.full(n, base, dtype=np.float64)
    g = np.empty(n, dtype=np.float64)
    h = np.empty(n, dtype=np.float64)
    state_bytes = pred.nbytes + g.nbytes + h.nbytes
    session.charge("gradient_bytes", state_bytes)

    valid_cols = valid_pred = y_valid = None
    if valid is not None or valid_rows is not None:
        vdata = valid if valid is not None else data
        if vdata.labels is None:
            raise SchemaMismatch("validation data has no labels")
        valid_cols = _raw_columns(names, vdata, merges)
        if valid_rows is not None:
            valid_cols = [_Rows(c, valid_rows) for c in valid_cols]
            y_valid = vdata.labels.values[valid_rows]
        else:
            y_valid = vdata.labels.values
        objective.check_labels(y_valid)
        valid_pred = np.full(y_valid.shape[0], base, dtype=np.float64)
        session.charge("gradient_bytes", valid_pred.nbytes)

    split_config = SplitConfig(config.min_data_in_leaf, config.min_split_gain)
    trees: list[Tree] = []
    train_hist: list[float] = []
    valid_hist: list[float] = []
    best_valid, best_iter = math.inf, 0

    def record(t: int) -> None:
        nonlocal best_valid, best_iter
        with np.errstate(over="ignore", invalid="ignore"):
            tl = objective.metric(y, pred[rows] if train_rows is not None else pred)
            vl = objective.metric(y_valid, valid_pred) if valid_pred is not None else None
        if not math.isfinite(tl) or (vl is not None and not math.isfinite(vl)):
            raise DivergenceDetected(f"non-finite loss at iteration {t}")
        train_hist.append(tl)
        if vl is not None:
            valid_hist.append(vl)
            if vl < best_valid:
                best_valid, best_iter = vl, t
        if callback is not None:
            callback(t, tl, vl)

    try:
        record(0)
        for t in range(1, config.num_trees + 1):
            for feat in features:
                feat.refresh()
            objective.gradients(y_all, pred, g, h)
            tree, partition = grow_tree(features, g, h, rows, config.max_leaves, split_config, session)
            trees.append(tree)
            for node, leaf_rows in partition:
                pred[leaf_rows] += config.learning_rate * tree.value[node]
            if valid_pred is not None:
                valid_pred += config.learning_rate * tree.predict(valid_cols, valid_pred.shape[0])
            record(t)
            if config.adaptive_bins:
                _resize_hot_bins(features, config.t_split, train_rows)
            if (config.early_stopping_rounds is not None and valid_pred is not None
                    and t - best_iter >= config.early_stopping_rounds):
                break
    finally:
        for feat in features:
            feat.release()
        session.release("gradient_bytes", state_bytes)
        if valid_pred is not None:
            session.release("gradient_bytes", valid_pred.nbytes)

    if config.early_stopping_rounds is not None and valid_pred is not None:
        trees = trees[:best_iter]
    return Model(
        base_score=base,
        trees=trees,
        learning_rate=config.learning_rate,
        objective=objective.name,
        feature_names=names,
        bin_boundaries=[f.mapper.boundaries.tolist() for f in features],
        train_loss=train_hist,
        valid_loss=valid_hist,
        metadata={
            "seed": config.seed,
            "num_trees": config.num_trees,
            "n_bins": [f.mapper.n_bins for f in features],
            "adaptive_bins": config.adaptive_bins,
            "binning_mode": config.binning_mode,
        },
    )


def _resize_hot_bins(features, t_split: int, train_rows) -> None:
    for feat in features:
        due = resize_due(feat.mapper, t_split)
        if not due:
            continue
        values, weights = feat.resize_source(train_rows)
        for b in due:
            try:
                adaptive_resize(feat.mapper, b, values, weights)
            except ResizeNoop:
                pass
