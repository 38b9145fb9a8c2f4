"""CSV ingestion into attached, zero-copy feature columns."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .columnar import Dataset, FeatureColumn, attach_column
from .errors import ParseError, SchemaError

_MISSING_TOKENS = {"", "nan", "NaN", "NA"}


def _parse(cell: str, row: int, name: str) -> float:
    if cell.strip() in _MISSING_TOKENS:
        return np.nan
    try:
        return float(cell)
    except ValueError:
        raise ParseError(f"row {row}, column {name}: cannot parse {cell!r}") from None


@dataclass
class Table:
    """Parsed CSV: one float64 buffer per column, in header order."""

    names: list[str]
    buffers: list[np.ndarray]

    @property
    def n_rows(self) -> int:
        return self.buffers[0].shape[0] if self.buffers else 0

    def column(self, name: str) -> np.ndarray:
        try:
            return self.buffers[self.names.index(name)]
        except ValueError:
            raise SchemaError(f"column {name!r} not found") from None


def read_table(path, columns: list[str] | None = None) -> Table:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: missing header row") from None
        if len(set(header)) != len(header):
            raise SchemaError(f"{path}: duplicate column names")
        text_rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"{path}: row {i} has {len(row)} cells, header has {len(header)}")
            text_rows.append(row)
    wanted = header if columns is None else columns
    for name in wanted:
        if name not in header:
            raise SchemaError(f"{path}: column {name!r} not found")
    buffers = []
    for name in wanted:
        j = header.index(name)
        buffers.append(np.fromiter((_parse(r[j], i, name) for i, r in enumerate(text_rows, start=1)),
                                   dtype=np.float64, count=len(text_rows)))
    return Table(list(wanted), buffers)


def ingest_csv(path, label: str | None = None, require_label: bool = True):
    """Parse ``path`` and attach every column in place.

    Returns ``(dataset, table)``; ``table`` owns the only copy of the values
    and must outlive any training run on the dataset.
    """
    table = read_table(path)
    if label is not None and label not in table.names:
        if require_label:
            raise SchemaError(f"{path}: label column {label!r} not found")
        label = None
    if table.n_rows == 0:
        return None, table
    cols: list[FeatureColumn] = []
    names: list[str] = []
    labels = None
    for name, buf in zip(table.names, table.buffers):
        col = attach_column(buf, buf.shape[0], 8)
        if name == label:
            labels = col
        else:
            cols.append(col)
            names.append(name)
    return Dataset(cols, labels, names), table
