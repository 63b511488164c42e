"""CSV ingestion for real-data analysis runs.

Streams are consumed in file order.  Categorical columns are encoded
through a user-supplied mapping (no automatic inference); all remaining
numeric columns, the response included, can be standardized to sample
mean 0 and sample standard deviation 1.  An intercept column of ones is
prepended after preprocessing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import math

import numpy as np

from .errors import DomainError, ParseError
from .report import atomic_write

INTERCEPT = "intercept"


@dataclass
class Dataset:
    """Encoded numeric design matrix with a designated response."""

    columns: Tuple[str, ...]      # feature names, intercept first
    x: np.ndarray                 # (n, len(columns))
    y: np.ndarray                 # (n,)
    response: str
    standardized: bool

    def __post_init__(self):
        if self.x.shape != (len(self.y), len(self.columns)):
            raise DomainError("dataset shapes are inconsistent")

    def __len__(self):
        return len(self.y)


def _encode_cell(cell: str, column: str, rownum: int,
                 mapping: Optional[Dict[str, float]]) -> float:
    cell = cell.strip()
    if cell == "":
        raise ParseError("missing value", row=rownum, column=column)
    if mapping is not None:
        if cell not in mapping:
            raise ParseError(f"value {cell!r} not in the categorical "
                             f"mapping", row=rownum, column=column)
        return float(mapping[cell])
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric value {cell!r}", row=rownum,
                         column=column) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {cell!r}", row=rownum,
                         column=column)
    return value


def load_csv(path, response_column: str, standardize: bool = False,
             categorical_maps: Optional[Dict[str, Dict[str, float]]] = None
             ) -> Dataset:
    """Read a comma-delimited file with a header row into a
    :class:`Dataset`, preserving row order as the streaming order."""
    categorical_maps = categorical_maps or {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file has no header row") from None
        if response_column not in header:
            raise ParseError(
                f"response column {response_column!r} not found; "
                f"columns are {header}")
        unknown = set(categorical_maps) - set(header)
        if unknown:
            raise ParseError(f"categorical mapping references unknown "
                             f"columns {sorted(unknown)}")
        rows = []
        for rownum, cells in enumerate(reader, start=2):
            if len(cells) != len(header):
                raise ParseError(
                    f"expected {len(header)} cells, got {len(cells)}",
                    row=rownum)
            rows.append([
                _encode_cell(cell, name, rownum,
                             categorical_maps.get(name))
                for name, cell in zip(header, cells)
            ])
    if not rows:
        raise ParseError("file contains no data rows")
    matrix = np.asarray(rows, dtype=float)

    if standardize:
        for j, name in enumerate(header):
            if name in categorical_maps:
                continue
            col = matrix[:, j]
            sd = col.std(ddof=1) if len(col) > 1 else 0.0
            if sd == 0.0:
                raise DomainError(f"zero variance column {name!r} cannot "
                                  f"be standardized")
            matrix[:, j] = (col - col.mean()) / sd

    resp_idx = header.index(response_column)
    y = matrix[:, resp_idx]
    feature_idx = [j for j in range(len(header)) if j != resp_idx]
    x = np.hstack([np.ones((len(rows), 1)), matrix[:, feature_idx]])
    columns = (INTERCEPT,) + tuple(header[j] for j in feature_idx)
    return Dataset(columns=columns, x=x, y=y, response=response_column,
                   standardized=standardize)


def write_csv(dataset: Dataset, path) -> None:
    """Write the processed matrix back out (intercept column dropped)."""
    header = list(dataset.columns[1:]) + [dataset.response]
    with atomic_write(path) as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(dataset)):
            row = [repr(float(v)) for v in dataset.x[i, 1:]]
            row.append(repr(float(dataset.y[i])))
            writer.writerow(row)
