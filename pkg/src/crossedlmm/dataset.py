"""Typed in-memory datasets and CSV ingestion.

Long format only: one row per observation.  Numeric columns hold the
response; factor columns (including the participant/stimulus identifier
columns) carry explicit level vocabularies and integer codes.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import MissingColumnError, MissingValueError, UnknownLevelError
from .factors import Factor

__all__ = ["Dataset", "ingest_csv", "write_csv"]


@dataclass(frozen=True)
class FactorColumn:
    codes: np.ndarray  # int32
    levels: tuple[str, ...]

    def labels(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=object)[self.codes]


@dataclass(frozen=True)
class NumericColumn:
    values: np.ndarray  # float64


class Dataset:
    """Immutable column store with typed factor and numeric columns."""

    def __init__(self, columns: dict):
        sizes = set()
        for col in columns.values():
            sizes.add(len(col.codes) if isinstance(col, FactorColumn) else len(col.values))
        if len(sizes) > 1:
            raise ValueError(f"column lengths differ: {sorted(sizes)}")
        self.columns = dict(columns)
        self.n_obs = sizes.pop() if sizes else 0

    def __contains__(self, name):
        return name in self.columns

    def numeric(self, name: str) -> np.ndarray:
        col = self._get(name)
        if not isinstance(col, NumericColumn):
            raise MissingColumnError(f"column {name!r} is not numeric")
        return col.values

    def factor(self, name: str) -> FactorColumn:
        col = self._get(name)
        if not isinstance(col, FactorColumn):
            raise MissingColumnError(f"column {name!r} is not a factor column")
        return col

    def _get(self, name):
        try:
            return self.columns[name]
        except KeyError:
            raise MissingColumnError(f"missing column {name!r}") from None

    def take(self, indices) -> "Dataset":
        """Row subset/permutation; used for permutation-invariance checks."""
        indices = np.asarray(indices)
        out = {}
        for name, col in self.columns.items():
            if isinstance(col, FactorColumn):
                out[name] = FactorColumn(col.codes[indices], col.levels)
            else:
                out[name] = NumericColumn(col.values[indices])
        return Dataset(out)

    def column_names(self):
        return list(self.columns)

    def __eq__(self, other):
        if not isinstance(other, Dataset) or set(self.columns) != set(other.columns):
            return False
        for name, col in self.columns.items():
            o = other.columns[name]
            if isinstance(col, FactorColumn):
                if not isinstance(o, FactorColumn) or col.levels != o.levels:
                    return False
                if not np.array_equal(col.codes, o.codes):
                    return False
            else:
                if not isinstance(o, NumericColumn) or not np.array_equal(col.values, o.values):
                    return False
        return True

    @staticmethod
    def from_codes(factors: dict, numerics: dict) -> "Dataset":
        """Build from pre-computed level codes and numeric arrays."""
        cols = {}
        for name, (codes, levels) in factors.items():
            cols[name] = FactorColumn(np.asarray(codes, dtype=np.int32), tuple(levels))
        for name, values in numerics.items():
            cols[name] = NumericColumn(np.asarray(values, dtype=np.float64))
        return Dataset(cols)


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def ingest_csv(
    path,
    schema: dict[str, Factor] | None = None,
    levels: dict[str, tuple[str, ...]] | None = None,
) -> Dataset:
    """Read a long-format CSV into a typed :class:`Dataset`.

    Columns named in ``schema`` become factor columns; other columns are
    numeric when every cell parses as a float and factors otherwise (which
    covers the unit identifier columns).  Level vocabularies come from
    ``levels`` when given, else are inferred sorted-lexicographically.
    Empty cells are rejected with their position (1-based data row).
    """
    schema = schema or {}
    levels = levels or {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MissingValueError("empty file", 0, "") from None
        header = [h.strip() for h in header]
        raw: list[list[str]] = [[] for _ in header]
        for r, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise MissingValueError("wrong number of cells", r, "")
            for c, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    raise MissingValueError("empty cell", r, header[c])
                raw[c].append(cell)

    columns = {}
    for c, name in enumerate(header):
        cells = raw[c]
        is_factor = name in schema or name in levels or not all(_is_float(x) for x in cells)
        if not is_factor:
            columns[name] = NumericColumn(np.asarray([float(x) for x in cells]))
            continue
        vocab = tuple(levels[name]) if name in levels else tuple(sorted(set(cells)))
        index = {lvl: i for i, lvl in enumerate(vocab)}
        codes = np.empty(len(cells), dtype=np.int32)
        for r, cell in enumerate(cells, start=1):
            if cell not in index:
                raise UnknownLevelError(f"level {cell!r} not in vocabulary of {name!r}", r, name)
            codes[r - 1] = index[cell]
        columns[name] = FactorColumn(codes, vocab)
    return Dataset(columns)


def write_csv(dataset: Dataset, path) -> None:
    """Write a dataset back to CSV; inverse of :func:`ingest_csv`."""
    names = dataset.column_names()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        rendered = []
        for name in names:
            col = dataset.columns[name]
            if isinstance(col, FactorColumn):
                rendered.append(col.labels())
            else:
                rendered.append([repr(v) for v in col.values])
        for r in range(dataset.n_obs):
            writer.writerow([rendered[c][r] for c in range(len(names))])
