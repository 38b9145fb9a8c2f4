"""Implicit merging of keyed side tables.

A side table keeps one row per unique key. Main-table rows reach it through a
:class:`JoinIndex` of 4-byte ordinals, so a merged feature costs one shared
N-length index plus U-length side structures instead of an N-length column
per feature.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .binning import MAX_BINS, BinMapper, BinnedColumn, construct_bins
from .columnar import FeatureColumn, Session, attach_column
from .errors import ConfigError, DuplicateKey, EmptyColumn, ShapeMismatch, StaleBinning
from .tree import Histogram, accumulate

MISSING_ORDINAL = -1
_MERGE = "merge_structure_bytes"


class SideTable:
    """Unique keys plus key-granular feature columns, bins and bin caches."""

    def __init__(self, table_id: str, keys: np.ndarray, feature_names: list[str],
                 columns: list[FeatureColumn], mappers: list[BinMapper],
                 binned: list[BinnedColumn], sorted_keys: np.ndarray, key_order: np.ndarray):
        self.table_id = table_id
        self.keys = keys
        self.feature_names = feature_names
        self.columns = columns
        self.mappers = mappers
        self.binned = binned
        self.sorted_keys = sorted_keys
        self.key_order = key_order

    @property
    def n_keys(self) -> int:
        return self.keys.shape[0]

    def feature_index(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise ShapeMismatch(f"side table {self.table_id!r} has no feature {name!r}") from None


def register_side_table(keys, features: Mapping[str, np.ndarray] | Sequence[np.ndarray],
                        max_bins: int = MAX_BINS, session: Session | None = None,
                        table_id: str = "side") -> SideTable:
    """Bin each side feature over its U per-key values.

    Raises :class:`DuplicateKey` on repeated keys and :class:`ShapeMismatch`
    when a feature column's length differs from the key count.
    """
    keys = np.asarray(keys)
    if keys.ndim != 1 or keys.shape[0] == 0:
        raise ShapeMismatch("side keys must be a non-empty 1-D array")
    if keys.dtype.kind == "f" and not np.isfinite(keys).all():
        raise ConfigError(f"side table {table_id!r} has missing keys")
    if isinstance(features, Mapping):
        names, arrays = list(features), list(features.values())
    else:
        arrays = list(features)
        names = [f"{table_id}_{j}" for j in range(len(arrays))]
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    dup = np.flatnonzero(sorted_keys[1:] == sorted_keys[:-1])
    if dup.shape[0]:
        raise DuplicateKey(f"side table {table_id!r}: key {sorted_keys[dup[0]]!r} repeated")
    columns, mappers, binned = [], [], []
    for j, arr in enumerate(arrays):
        arr = np.ascontiguousarray(arr, dtype=np.float64) if np.asarray(arr).dtype.kind != "f" else arr
        if arr.shape[0] != keys.shape[0]:
            raise ShapeMismatch(f"side feature {names[j]!r} has {arr.shape[0]} values for {keys.shape[0]} keys")
        col = attach_column(arr, arr.shape[0], arr.dtype.itemsize)
        mapper = construct_bins(col, max_bins, feature_id=j)
        columns.append(col)
        mappers.append(mapper)
        binned.append(BinnedColumn(col, mapper, "cache", session, category=_MERGE))
        if session is not None:
            session.charge(_MERGE, mapper.boundaries.nbytes)
    if session is not None:
        session.charge(_MERGE, sorted_keys.nbytes + order.nbytes)
    return SideTable(table_id, keys, names, columns, mappers, binned, sorted_keys, order)


@dataclass
class JoinIndex:
    ordinals: np.ndarray
    side: SideTable

    @property
    def n_rows(self) -> int:
        return self.ordinals.shape[0]

    @property
    def has_unmatched(self) -> bool:
        return bool((self.ordinals == MISSING_ORDINAL).any())

    def key_counts(self, rows: np.ndarray | None = None) -> np.ndarray:
        """How many (selected) main rows reference each side key."""
        o = self.ordinals if rows is None else self.ordinals[rows]
        return np.bincount(o[o >= 0], minlength=self.side.n_keys)


def _key_values(main_key_column) -> np.ndarray:
    return main_key_column.values if isinstance(main_key_column, FeatureColumn) else np.asarray(main_key_column)


def build_join_index(main_key_column, side: SideTable, session: Session | None = None) -> JoinIndex:
    vals = _key_values(main_key_column)
    if vals.shape[0] == 0:
        raise EmptyColumn("main key column has no rows")
    pos = np.searchsorted(side.sorted_keys, vals)
    np.minimum(pos, side.n_keys - 1, out=pos)
    hit = side.sorted_keys[pos] == vals
    ordinals = np.where(hit, side.key_order[pos], MISSING_ORDINAL).astype(np.int32)
    if session is not None:
        session.charge(_MERGE, ordinals.nbytes)
    return JoinIndex(ordinals, side)


class MergedFeature:
    """Virtual N-row column ``side.features[j][ordinals[row]]``.

    Holds its own copy of the side mapper (with a missing bin added when the
    join has unmatched rows) and a U-byte bin cache, so training can resize it
    without touching the shared side table.
    """

    def __init__(self, side: SideTable, feature: int | str, join: JoinIndex,
                 session: Session | None = None, mapper: BinMapper | None = None,
                 rows: np.ndarray | None = None):
        self.side = side
        self.side_feature = feature if isinstance(feature, int) else side.feature_index(feature)
        self.name = side.feature_names[self.side_feature]
        self.join = join
        self.column = side.columns[self.side_feature]
        self.mapper = (mapper if mapper is not None else side.mappers[self.side_feature]).copy()
        if join.has_unmatched:
            self.mapper.enable_missing_bin()
        self.feature_id = self.mapper.feature_id
        self._session = session
        self._side_bins = BinnedColumn(self.column, self.mapper, "cache", session, category=_MERGE)
        self._weights = join.key_counts(rows)
        self._charged = self.mapper.nbytes() + self._weights.nbytes
        if session is not None:
            session.charge(_MERGE, self._charged)

    @property
    def n_rows(self) -> int:
        return self.join.n_rows

    @property
    def n_bins(self) -> int:
        return self.mapper.n_bins

    @property
    def stale(self) -> bool:
        return self._side_bins.stale

    def refresh(self) -> None:
        self._side_bins.refresh()

    def virtual_value(self, row: int) -> float:
        o = self.join.ordinals[row]
        return float("nan") if o == MISSING_ORDINAL else float(self.column.values[o])

    def __getitem__(self, rows) -> np.ndarray:
        o = self.join.ordinals[rows]
        out = self.column.values[np.maximum(o, 0)]
        return np.where(o == MISSING_ORDINAL, np.nan, out)

    def bins(self, rows: np.ndarray | None = None) -> np.ndarray:
        if self.stale:
            raise StaleBinning(f"merged feature {self.name!r} must be re-quantized first")
        o = self.join.ordinals if rows is None else self.join.ordinals[rows]
        out = self._side_bins.bins()[np.maximum(o, 0)]
        if self.mapper.has_missing_bin:
            out[o == MISSING_ORDINAL] = self.mapper.missing_bin
        return out

    def resize_source(self, rows: np.ndarray | None = None):
        return self.column.values, self._weights

    def release(self) -> None:
        self._side_bins.release()
        if self._session is not None:
            self._session.release(_MERGE, self._charged)
            self._session = None


def implicit_histogram(rows: np.ndarray, merged: MergedFeature, g: np.ndarray, h: np.ndarray,
                       session: Session | None = None) -> Histogram:
    """Histogram of a merged feature over node ``rows`` without materializing it."""
    return accumulate(merged.bins(rows), merged.n_bins, g[rows], h[rows], session)


def materialize_merge(main_key_column, side: SideTable, session: Session | None = None,
                      join: JoinIndex | None = None) -> dict[str, np.ndarray]:
    """Explicit N-row columns for every side feature (the baseline being avoided)."""
    if join is None:
        join = build_join_index(main_key_column, side)
    o = join.ordinals
    missing = o == MISSING_ORDINAL
    out = {}
    for name, col in zip(side.feature_names, side.columns):
        arr = col.values.astype(np.float64)[np.maximum(o, 0)]
        arr[missing] = np.nan
        if session is not None:
            session.charge("raw_value_bytes_copied", arr.nbytes)
        out[name] = arr
    return out
