"""Datasets with typed covariate columns, and CSV ingestion."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .margins import MarginKind

RESPONSE = "response"
CATEGORICAL = "categorical"
COLUMN_KINDS = tuple(k.value for k in MarginKind) + (CATEGORICAL, RESPONSE)


class DataError(ValueError):
    """Input data could not be parsed or does not fit its declarations."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n x p`` covariates with per-column kinds and a binary response."""

    X: np.ndarray
    y: np.ndarray
    kinds: tuple
    names: tuple = field(default=())

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y)
        if X.shape[0] != y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        if not np.all((y == 0) | (y == 1)):
            raise DataError("response values must be 0 or 1")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates must be finite")
        kinds = tuple(MarginKind(k) for k in self.kinds)
        if len(kinds) != X.shape[1]:
            raise DataError(f"{len(kinds)} column kinds declared for {X.shape[1]} columns")
        names = tuple(self.names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def means(self) -> np.ndarray:
        return self.X.mean(axis=0)

    @cached_property
    def variances(self) -> np.ndarray:
        return self.X.var(axis=0, ddof=1) if self.n > 1 else np.ones(self.p)

    @property
    def response_mean(self) -> float:
        return float(self.y.mean())

    @property
    def continuous(self) -> list[int]:
        return [j for j, k in enumerate(self.kinds) if k is MarginKind.CONTINUOUS]

    def design(self) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.X])

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.kinds, self.names)


def parse_column_decl(text: str) -> tuple[str, str]:
    name, sep, kind = text.rpartition(":")
    if not sep or not name:
        raise DataError(f"column declaration {text!r} is not of the form name:kind")
    kind = kind.strip().lower()
    if kind not in COLUMN_KINDS:
        raise DataError(f"column {name!r}: unknown kind {kind!r} (expected one of {', '.join(COLUMN_KINDS)})")
    return name.strip(), kind


def read_schema(path) -> dict[str, str]:
    """Sidecar schema: one ``name:kind`` per line, ``#`` starts a comment."""
    decls = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if line:
            name, kind = parse_column_decl(line)
            decls[name] = kind
    return decls


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [row for row in reader if row]
    return header, rows


def _number(value: str, row: int, col: str) -> float:
    text = value.strip()
    try:
        x = float(text)
    except ValueError:
        x = math.nan
    if not text or not math.isfinite(x):
        raise DataError(f"row {row}, column {col!r}: expected a finite number, got {value!r}")
    return x


def read_csv(path, decls: dict[str, str], response_required: bool = True, levels=None,
             ignore_undeclared: bool = False):
    """Load a CSV into a :class:`Dataset`.

    Every header column must be declared. Categorical columns expand into
    ``d - 1`` binary dummies named ``col=LEVEL`` in first-appearance order,
    the first level serving as reference. ``levels`` fixes the level lists
    (used when scoring new data with a stored model). Undeclared header
    columns are an error unless ``ignore_undeclared`` is set.

    Returns
    -------
    dataset : Dataset
        Response is all zeros when the file has no response column and
        ``response_required`` is false.
    levels : dict
        Category levels per categorical column.
    """
    header, rows = _read_rows(path)
    for name in header:
        if name not in decls and not ignore_undeclared:
            raise DataError(f"column {name!r} has no kind declaration")
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in the header")
    for name, kind in decls.items():
        if name not in header and (kind != RESPONSE or response_required):
            raise DataError(f"declared column {name!r} is missing from {path}")
    responses = [h for h in header if decls.get(h) == RESPONSE]
    if len(responses) > 1:
        raise DataError(f"exactly one response column allowed, found {responses}")
    if response_required and not responses:
        raise DataError("no response column declared")
    for i, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"row {i}: expected {len(header)} fields, found {len(row)}")

    levels = dict(levels or {})
    columns, kinds, names = [], [], []
    y = np.zeros(len(rows), dtype=np.int64)
    for c, name in enumerate(header):
        kind = decls.get(name)
        if kind is None:
            continue
        values = [row[c] for row in rows]
        if kind == RESPONSE:
            vals = [_number(v, i, name) for i, v in enumerate(values, start=2)]
            for i, v in enumerate(vals, start=2):
                if v not in (0.0, 1.0):
                    raise DataError(f"row {i}, column {name!r}: response must be 0 or 1, got {v:g}")
            y = np.asarray(vals, dtype=np.int64)
        elif kind == CATEGORICAL:
            stripped = [v.strip() for v in values]
            for i, v in enumerate(stripped, start=2):
                if not v:
                    raise DataError(f"row {i}, column {name!r}: empty category")
            lv = levels.get(name)
            if lv is None:
                lv = list(dict.fromkeys(stripped))
                levels[name] = lv
            for level in lv[1:]:
                columns.append(np.array([1.0 if v == level else 0.0 for v in stripped]))
                kinds.append(MarginKind.BINARY)
                names.append(f"{name}={level}")
        else:
            col = np.array([_number(v, i, name) for i, v in enumerate(values, start=2)])
            if kind == MarginKind.BINARY.value and not np.all((col == 0) | (col == 1)):
                raise DataError(f"column {name!r}: binary values must be 0 or 1")
            if kind == MarginKind.COUNT.value and not np.all((col >= 0) & (col == np.round(col))):
                raise DataError(f"column {name!r}: count values must be non-negative integers")
            columns.append(col)
            kinds.append(MarginKind(kind))
            names.append(name)
    X = np.column_stack(columns) if columns else np.zeros((len(rows), 0))
    return Dataset(X, y, tuple(kinds), tuple(names)), levels


def write_csv(path, data: Dataset, response_name: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(data.names) + [response_name])
        for row, label in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
