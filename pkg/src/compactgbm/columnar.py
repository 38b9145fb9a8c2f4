"""Columnar storage over caller-owned buffers, plus allocation accounting.

A :class:`FeatureColumn` is a read-only numpy view onto memory the caller
already owns. Nothing here copies raw feature values; the bytes the library
does allocate (bin caches, histograms, join structures, gradients) are
recorded in a :class:`Session` at each allocation site.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .errors import EmptyColumn, IndexOutOfRange, ShapeMismatch, UnsupportedWidth

_DTYPE_BY_WIDTH = {4: np.dtype("<f4"), 8: np.dtype("<f8")}

CATEGORIES = (
    "raw_value_bytes_copied",
    "bin_cache_bytes",
    "histogram_bytes",
    "merge_structure_bytes",
    "gradient_bytes",
)


@dataclass(frozen=True)
class FootprintReport:
    raw_value_bytes_copied: int = 0
    bin_cache_bytes: int = 0
    histogram_bytes: int = 0
    merge_structure_bytes: int = 0
    gradient_bytes: int = 0
    total_library_bytes: int = 0

    def lines(self) -> list[str]:
        return [f"mem.{f.name}={getattr(self, f.name)}" for f in fields(self)]


class Session:
    """Byte counters for library-initiated allocations.

    Tracks the live byte count per category and the snapshot taken when the
    live total was largest. Safe to update from several threads.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._live = dict.fromkeys(CATEGORIES, 0)
        self._peak = dict(self._live)

    def charge(self, category: str, nbytes: int) -> None:
        if category not in self._live:
            raise KeyError(category)
        with self._lock:
            self._live[category] += int(nbytes)
            if sum(self._live.values()) > sum(self._peak.values()):
                self._peak = dict(self._live)

    def release(self, category: str, nbytes: int) -> None:
        with self._lock:
            self._live[category] -= int(nbytes)
            if self._live[category] < 0:
                raise ValueError(f"released more {category} than was charged")

    def report(self, peak: bool = False) -> FootprintReport:
        with self._lock:
            snap = dict(self._peak if peak else self._live)
        return FootprintReport(**snap, total_library_bytes=sum(snap.values()))


def memory_footprint(session: Session, peak: bool = False) -> FootprintReport:
    return session.report(peak=peak)


class FeatureColumn:
    """Read-only view of a caller's contiguous float32/float64 buffer.

    The caller must keep the buffer alive and unmodified while any training
    run references the column.
    """

    __slots__ = ("column_id", "length", "element_width", "_view")

    def __init__(self, column_id: int, view: np.ndarray):
        self.column_id = column_id
        self.length = int(view.shape[0])
        self.element_width = int(view.dtype.itemsize)
        self._view = view

    @property
    def values(self) -> np.ndarray:
        """The caller's values, as a non-writable view (never a copy)."""
        return self._view

    def __len__(self) -> int:
        return self.length

    def __repr__(self) -> str:
        return (f"FeatureColumn(column_id={self.column_id}, length={self.length}, "
                f"element_width={self.element_width})")


_next_column_id = 0
_id_lock = threading.Lock()


def attach_column(buffer, length: int, element_width: int = 8,
                  column_id: int | None = None) -> FeatureColumn:
    """Wrap ``buffer`` (anything exporting the buffer protocol) in place.

    Raises :class:`EmptyColumn` for ``length == 0`` and
    :class:`UnsupportedWidth` for widths other than 4 or 8 bytes.
    """
    global _next_column_id
    if length <= 0:
        raise EmptyColumn("column has no rows")
    dtype = _DTYPE_BY_WIDTH.get(element_width)
    if dtype is None:
        raise UnsupportedWidth(f"element width {element_width} (expected 4 or 8)")
    if isinstance(buffer, np.ndarray):
        if buffer.dtype.kind != "f" or buffer.dtype.itemsize != element_width:
            raise UnsupportedWidth(f"array dtype {buffer.dtype} does not match width {element_width}")
        if buffer.ndim != 1 or not buffer.flags.c_contiguous:
            raise ShapeMismatch("column buffer must be one-dimensional and contiguous")
        view = buffer.view()
        if view.dtype.byteorder == ">":
            raise UnsupportedWidth("big-endian buffers are not supported in place")
    else:
        mv = memoryview(buffer)
        if not mv.contiguous:
            raise ShapeMismatch("column buffer must be contiguous")
        view = np.frombuffer(mv, dtype=dtype)
    if view.shape[0] < length:
        raise ShapeMismatch(f"buffer holds {view.shape[0]} values, {length} requested")
    view = view[:length]
    view.flags.writeable = False
    if column_id is None:
        with _id_lock:
            column_id = _next_column_id
            _next_column_id += 1
    return FeatureColumn(column_id, view)


def read_value(column: FeatureColumn, row: int) -> float:
    """Return the stored value at ``row`` unchanged (NaN/inf included)."""
    if not 0 <= row < column.length:
        raise IndexOutOfRange(f"row {row} outside [0, {column.length})")
    return float(column.values[row])


def is_missing(value: float) -> bool:
    return not math.isfinite(value)


@dataclass
class Dataset:
    columns: list[FeatureColumn]
    labels: FeatureColumn | None
    feature_names: list[str]
    n_rows: int = field(init=False)

    def __post_init__(self) -> None:
        if len(self.columns) != len(self.feature_names):
            raise ShapeMismatch("one name per column required")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise ShapeMismatch("feature names must be unique")
        lengths = {c.length for c in self.columns}
        if self.labels is not None:
            lengths.add(self.labels.length)
        if len(lengths) > 1:
            raise ShapeMismatch(f"columns disagree on row count: {sorted(lengths)}")
        if not lengths:
            raise EmptyColumn("dataset has no columns")
        self.n_rows = lengths.pop()

    def column(self, name: str) -> FeatureColumn:
        return self.columns[self.feature_names.index(name)]

    @classmethod
    def from_arrays(cls, features: Sequence[np.ndarray] | np.ndarray,
                    labels: np.ndarray | None = None,
                    feature_names: Sequence[str] | None = None) -> "Dataset":
        """Attach each 1-D array without copying.

        A 2-D input is read column by column, so it must be Fortran-ordered
        for the columns to be contiguous views.
        """
        if isinstance(features, np.ndarray) and features.ndim == 2:
            cols = [features[:, j] for j in range(features.shape[1])]
        else:
            cols = list(features)
        attached = [attach_column(a, a.shape[0], a.dtype.itemsize) for a in cols]
        names = list(feature_names) if feature_names is not None else [f"f{j}" for j in range(len(cols))]
        lab = None if labels is None else attach_column(labels, labels.shape[0], labels.dtype.itemsize)
        return cls(attached, lab, names)
