"""Quantile bin construction, row quantization and adaptive bin resizing.

Bins are right-closed: bin ``i`` holds values ``v`` with
``boundaries[i-1] < v <= boundaries[i]``. Non-finite values go to a trailing
missing bin when the mapper has one.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .columnar import FeatureColumn, Session
from .errors import (
    AllMissing,
    ConfigError,
    IndexOutOfRange,
    InvalidResizeTarget,
    ResizeNoop,
    StaleBinning,
    UnexpectedMissing,
)

MAX_BINS = 256
DEFAULT_T_SPLIT = 32
# bin construction looks at an evenly strided sample above this size
BIN_CONSTRUCT_SAMPLE = 200_000
_ZEROCOPY_CHUNK = 8192

BIN_CACHE = "cache"
ZERO_COPY = "zerocopy"


@dataclass
class BinMapper:
    feature_id: int
    boundaries: np.ndarray
    has_missing_bin: bool = False
    max_bins: int = MAX_BINS
    split_hits: np.ndarray = field(default=None)  # type: ignore[assignment]
    version: int = 0

    def __post_init__(self) -> None:
        self.boundaries = np.asarray(self.boundaries, dtype=np.float64)
        if self.split_hits is None:
            self.split_hits = np.zeros(self.n_bins, dtype=np.int64)

    @property
    def n_finite_bins(self) -> int:
        return self.boundaries.shape[0] + 1

    @property
    def n_bins(self) -> int:
        return self.n_finite_bins + int(self.has_missing_bin)

    @property
    def missing_bin(self) -> int | None:
        return self.n_finite_bins if self.has_missing_bin else None

    def copy(self) -> "BinMapper":
        return BinMapper(self.feature_id, self.boundaries.copy(), self.has_missing_bin,
                         self.max_bins, self.split_hits.copy(), self.version)

    def enable_missing_bin(self) -> None:
        if self.has_missing_bin:
            return
        if self.n_bins >= self.max_bins:
            raise ConfigError(f"feature {self.feature_id}: no room for a missing bin")
        self.has_missing_bin = True
        self.split_hits = np.append(self.split_hits, 0)
        self.version += 1

    def nbytes(self) -> int:
        return self.boundaries.nbytes + self.split_hits.nbytes


def _midpoint(a: float, b: float) -> float:
    mid = a * 0.5 + b * 0.5
    return mid if a <= mid < b else a


def _as_values(column) -> np.ndarray:
    return column.values if isinstance(column, FeatureColumn) else np.asarray(column)


def construct_bins(column, max_bins: int = MAX_BINS, feature_id: int | None = None,
                   rows: np.ndarray | None = None, capacity: int = MAX_BINS) -> BinMapper:
    """Equal-frequency boundaries placed at midpoints between distinct values.

    ``max_bins`` is the initial bin budget; ``capacity`` is how far adaptive
    resizing may later grow the mapper. ``rows`` restricts construction to a
    subset (e.g. one CV training fold).
    """
    if not 2 <= max_bins <= MAX_BINS:
        raise ConfigError(f"max_bins must be in [2, {MAX_BINS}], got {max_bins}")
    values = _as_values(column)
    if rows is not None:
        values = values[rows]
    if values.shape[0] > BIN_CONSTRUCT_SAMPLE:
        step = -(-values.shape[0] // BIN_CONSTRUCT_SAMPLE)
        has_missing = not np.isfinite(values).all()
        values = values[::step]
    else:
        has_missing = None
    finite_mask = np.isfinite(values)
    if has_missing is None:
        has_missing = not finite_mask.all()
    finite = values[finite_mask]
    if finite.shape[0] == 0:
        raise AllMissing("every value is missing")
    distinct, counts = np.unique(finite, return_counts=True)
    budget = max_bins - int(has_missing)
    if distinct.shape[0] <= budget:
        cuts = np.arange(distinct.shape[0] - 1)
    else:
        cum = np.cumsum(counts)
        targets = np.arange(1, budget) * (cum[-1] / budget)
        hi = np.clip(np.searchsorted(cum, targets), 1, cum.shape[0] - 1)
        lo = hi - 1
        pick_lo = (targets - cum[lo]) <= (cum[hi] - targets)
        cuts = np.where(pick_lo, lo, hi)
        cuts = np.unique(np.clip(cuts, 0, distinct.shape[0] - 2))
    boundaries = np.array([_midpoint(distinct[c], distinct[c + 1]) for c in cuts], dtype=np.float64)
    fid = feature_id if feature_id is not None else getattr(column, "column_id", 0)
    return BinMapper(fid, boundaries, bool(has_missing), max(capacity, max_bins))


def bin_of(value: float, mapper: BinMapper) -> int:
    if not np.isfinite(value):
        if not mapper.has_missing_bin:
            raise UnexpectedMissing(f"missing value for feature {mapper.feature_id} without a missing bin")
        return mapper.n_finite_bins
    return int(np.searchsorted(mapper.boundaries, value, side="left"))


def bins_of(values: np.ndarray, mapper: BinMapper) -> np.ndarray:
    """Vectorised :func:`bin_of`; returns ``uint8`` indices."""
    idx = np.searchsorted(mapper.boundaries, values, side="left").astype(np.uint8)
    missing = ~np.isfinite(values)
    if missing.any():
        if not mapper.has_missing_bin:
            raise UnexpectedMissing(f"missing value for feature {mapper.feature_id} without a missing bin")
        idx[missing] = mapper.n_finite_bins
    return idx


class BinnedColumn:
    """Bin indices of one column under one mapper version.

    In ``cache`` mode one byte per row is stored (and charged to the session);
    in ``zerocopy`` mode indices are recomputed from the raw view on demand.
    """

    def __init__(self, column: FeatureColumn, mapper: BinMapper, mode: str = BIN_CACHE,
                 session: Session | None = None, category: str = "bin_cache_bytes"):
        if mode not in (BIN_CACHE, ZERO_COPY):
            raise ConfigError(f"unknown binning mode {mode!r}")
        self.column = column
        self.mapper = mapper
        self.mode = mode
        self.feature_id = mapper.feature_id
        self._session = session
        self._category = category
        self._cache: np.ndarray | None = None
        self.mapper_version = -1
        if mode == BIN_CACHE:
            self._cache = np.empty(column.length, dtype=np.uint8)
            if session is not None:
                session.charge(category, self._cache.nbytes)
        self.refresh()

    @property
    def n_bins(self) -> int:
        return self.mapper.n_bins

    @property
    def stale(self) -> bool:
        return self.mapper_version != self.mapper.version

    def refresh(self) -> None:
        """Re-quantize in place if the mapper changed since the last pass."""
        if not self.stale:
            return
        if self._cache is not None:
            vals = self.column.values
            for start in range(0, vals.shape[0], 1 << 16):
                self._cache[start:start + (1 << 16)] = bins_of(vals[start:start + (1 << 16)], self.mapper)
        self.mapper_version = self.mapper.version

    def bins(self, rows: np.ndarray | None = None) -> np.ndarray:
        if self.stale:
            raise StaleBinning(f"feature {self.feature_id}: binned at version "
                               f"{self.mapper_version}, mapper is at {self.mapper.version}")
        if self._cache is not None:
            return self._cache if rows is None else self._cache[rows]
        vals = self.column.values
        if rows is None:
            return bins_of(vals, self.mapper)
        out = np.empty(rows.shape[0], dtype=np.uint8)
        for start in range(0, rows.shape[0], _ZEROCOPY_CHUNK):
            sl = slice(start, start + _ZEROCOPY_CHUNK)
            out[sl] = bins_of(vals[rows[sl]], self.mapper)
        return out

    def resize_source(self, rows: np.ndarray | None = None):
        vals = self.column.values
        return (vals if rows is None else vals[rows]), None

    def release(self) -> None:
        if self._cache is not None and self._session is not None:
            self._session.release(self._category, self._cache.nbytes)
            self._session = None


def quantize(column: FeatureColumn, mapper: BinMapper, mode: str = BIN_CACHE,
             session: Session | None = None) -> BinnedColumn:
    return BinnedColumn(column, mapper, mode, session)


def record_split_hit(mapper: BinMapper, bin: int) -> int:
    if not 0 <= bin < mapper.n_bins:
        raise IndexOutOfRange(f"bin {bin} outside [0, {mapper.n_bins})")
    mapper.split_hits[bin] += 1
    return int(mapper.split_hits[bin])


def resize_due(mapper: BinMapper, t_split: int = DEFAULT_T_SPLIT) -> list[int]:
    """Finite bins whose hit counter exceeds ``t_split``, highest index first."""
    hot = np.flatnonzero(mapper.split_hits[:mapper.n_finite_bins] > t_split)
    return [int(b) for b in hot[::-1]]


def _median(sorted_vals: np.ndarray, weights: np.ndarray) -> float:
    """Median of the multiset where ``sorted_vals[i]`` occurs ``weights[i]`` times."""
    cum = np.cumsum(weights)
    n = int(cum[-1])

    def at(pos: int) -> float:
        return float(sorted_vals[np.searchsorted(cum, pos, side="right")])

    if n % 2:
        return at(n // 2)
    return (at(n // 2 - 1) + at(n // 2)) / 2


def adaptive_resize(mapper: BinMapper, bin: int, column, weights: np.ndarray | None = None) -> BinMapper:
    """Refine bin ``bin`` of ``mapper`` in place and return the mapper.

    Below ``max_bins`` the bin is divided at the median of the raw values that
    fall in it. At capacity, both of its inner boundaries move halfway toward
    that median, which widens the neighbours. ``column`` supplies the raw
    values; ``weights`` optionally gives each value a multiplicity.
    """
    if not 0 <= bin < mapper.n_bins:
        raise IndexOutOfRange(f"bin {bin} outside [0, {mapper.n_bins})")
    if bin == mapper.missing_bin:
        raise InvalidResizeTarget("the missing bin is never resized")

    values = _as_values(column)
    b = mapper.boundaries
    lo = b[bin - 1] if bin > 0 else -np.inf
    hi = b[bin] if bin < b.shape[0] else np.inf
    inside = np.isfinite(values) & (values > lo) & (values <= hi)
    if weights is not None:
        inside &= weights > 0
    in_vals = values[inside]
    in_w = np.ones(in_vals.shape[0], dtype=np.int64) if weights is None else weights[inside]
    order = np.argsort(in_vals, kind="stable")
    in_vals, in_w = in_vals[order], in_w[order]

    mapper.split_hits[bin] = 0
    if in_vals.shape[0] == 0 or in_vals[0] == in_vals[-1]:
        raise ResizeNoop(f"bin {bin} of feature {mapper.feature_id} holds fewer than 2 distinct values")
    vmax = in_vals[-1]
    median = _median(in_vals, in_w)
    if median >= vmax:
        below = in_vals[in_vals < vmax][-1]
        median = _midpoint(below, vmax)

    if mapper.n_bins < mapper.max_bins:
        mapper.boundaries = np.insert(b, bin, median)
        mapper.split_hits = np.insert(mapper.split_hits, bin + 1, 0)
    else:
        new_lo = lo * 0.5 + median * 0.5 if bin > 0 else lo
        new_hi = hi * 0.5 + median * 0.5 if bin < b.shape[0] else hi
        if (new_lo == lo and new_hi == hi) or not new_lo < new_hi:
            raise ResizeNoop(f"bin {bin} of feature {mapper.feature_id} cannot shrink further")
        nb = b.copy()
        if bin > 0:
            nb[bin - 1] = new_lo
        if bin < b.shape[0]:
            nb[bin] = new_hi
        mapper.boundaries = nb
    mapper.version += 1
    return mapper
