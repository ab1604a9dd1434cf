"""Unit-level dataset container and its CSV representation.

CSV layout: one row per unit with an ``id`` column, a coordinate pair
(``lon``/``lat`` for geodesic distance or ``x``/``y`` for Euclidean), a 0/1
treatment column ``z``, an optional outcome, and covariates in columns
prefixed ``x_``. The outcome column is ``outcome``; with lon/lat coordinates
``y`` is accepted as well, since it cannot be confused with a coordinate.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import InputError

COVARIATE_PREFIX = "x_"


@dataclass
class Dataset:
    """Spatially indexed units with covariates, a binary treatment and an outcome."""

    coords: np.ndarray
    X: np.ndarray
    z: np.ndarray
    covariate_names: List[str]
    y: Optional[np.ndarray] = None
    ids: Optional[np.ndarray] = None
    metric: str = "euclidean"
    extra: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(-1, 1)
        self.z = np.asarray(self.z).astype(int)
        n = self.z.shape[0]
        if self.ids is None:
            self.ids = np.array([str(i) for i in range(n)], dtype=object)
        else:
            self.ids = np.asarray(self.ids, dtype=object)
        if self.y is not None:
            self.y = np.asarray(self.y, dtype=float)
        self.covariate_names = list(self.covariate_names)
        self._validate()

    def _validate(self):
        n = self.n
        if self.coords.shape != (n, 2):
            raise InputError(f"coords must have shape ({n}, 2), got {self.coords.shape}")
        if self.X.shape[0] != n:
            raise InputError("covariate rows do not match number of units")
        if self.X.shape[1] != len(self.covariate_names):
            raise InputError("covariate names do not match covariate columns")
        if not np.all((self.z == 0) | (self.z == 1)):
            raise InputError("treatment must be coded 0/1")
        if self.y is not None and self.y.shape != (n,):
            raise InputError("outcome length does not match number of units")
        if len(self.ids) != n or len(set(self.ids)) != n:
            raise InputError("unit ids must be unique, one per unit")
        if self.metric not in ("euclidean", "geodesic"):
            raise InputError(f"unknown metric {self.metric!r}")
        for key, val in self.extra.items():
            if np.shape(val)[0] != n:
                raise InputError(f"extra column {key!r} has wrong length")

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def treated_idx(self) -> np.ndarray:
        return np.flatnonzero(self.z == 1)

    @property
    def control_idx(self) -> np.ndarray:
        return np.flatnonzero(self.z == 0)

    def covariate(self, name: str) -> np.ndarray:
        if name in self.covariate_names:
            return self.X[:, self.covariate_names.index(name)]
        if name in self.extra:
            return np.asarray(self.extra[name], dtype=float)
        raise InputError(f"unknown covariate {name!r}")

    def with_covariates(self, names: Sequence[str]) -> "Dataset":
        """Copy whose observed covariates are ``names`` (may pull from ``extra``)."""
        X = np.column_stack([self.covariate(nm) for nm in names]) if names else np.empty((self.n, 0))
        return Dataset(coords=self.coords, X=X, z=self.z, covariate_names=list(names),
                       y=self.y, ids=self.ids, metric=self.metric, extra=dict(self.extra))

    def take(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(coords=self.coords[rows], X=self.X[rows], z=self.z[rows],
                       covariate_names=self.covariate_names,
                       y=None if self.y is None else self.y[rows],
                       ids=self.ids[rows], metric=self.metric,
                       extra={k: np.asarray(v)[rows] for k, v in self.extra.items()})

    def equals(self, other: "Dataset") -> bool:
        if self.metric != other.metric or self.covariate_names != other.covariate_names:
            return False
        if (self.y is None) != (other.y is None):
            return False
        same = (np.array_equal(self.coords, other.coords)
                and np.array_equal(self.X, other.X)
                and np.array_equal(self.z, other.z)
                and list(self.ids) == list(other.ids))
        if self.y is not None:
            same = same and np.array_equal(self.y, other.y)
        return bool(same)


def _coord_columns(header: Sequence[str]):
    cols = set(header)
    if {"lon", "lat"} <= cols:
        return ("lon", "lat"), "geodesic"
    if {"x", "y"} <= cols:
        return ("x", "y"), "euclidean"
    raise InputError("missing coordinate columns: need (lon, lat) or (x, y)")


def parse_csv(text: str) -> Dataset:
    """Parse dataset CSV text. Errors name the offending column or 1-based data row."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise InputError("empty CSV: header row required") from None
    if len(set(header)) != len(header):
        raise InputError("duplicate column names in header")
    for col in ("id", "z"):
        if col not in header:
            raise InputError(f"missing required column {col!r}")
    (cx, cy), metric = _coord_columns(header)
    # With Euclidean coordinates the column "y" is the second coordinate, so the
    # outcome must then be called "outcome".
    outcome_col = "outcome" if metric == "euclidean" else ("y" if "y" in header else "outcome")
    has_outcome = outcome_col in header
    cov_cols = [h for h in header if h.startswith(COVARIATE_PREFIX)]
    pos = {h: k for k, h in enumerate(header)}

    ids, coords, X, z, y = [], [], [], [], []
    for rownum, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise InputError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")

        def num(col):
            raw = row[pos[col]].strip()
            if raw == "" or raw.lower() in ("na", "nan"):
                raise InputError(f"row {rownum}: missing value in column {col!r}")
            try:
                val = float(raw)
            except ValueError:
                raise InputError(f"row {rownum}: non-numeric value {raw!r} in column {col!r}") from None
            if not np.isfinite(val):
                raise InputError(f"row {rownum}: non-finite value in column {col!r}")
            return val

        ident = row[pos["id"]].strip()
        if not ident:
            raise InputError(f"row {rownum}: empty id")
        zval = num("z")
        if zval not in (0.0, 1.0):
            raise InputError(f"row {rownum}: treatment z must be 0 or 1, got {row[pos['z']]!r}")
        ids.append(ident)
        coords.append((num(cx), num(cy)))
        X.append([num(c) for c in cov_cols])
        z.append(int(zval))
        if has_outcome:
            y.append(num(outcome_col))

    if not ids:
        raise InputError("CSV has no data rows")
    seen = set()
    for k, ident in enumerate(ids, start=1):
        if ident in seen:
            raise InputError(f"row {k}: duplicate id {ident!r}")
        seen.add(ident)
    names = [c[len(COVARIATE_PREFIX):] for c in cov_cols]
    return Dataset(coords=np.array(coords), X=np.array(X, dtype=float).reshape(len(ids), len(names)),
                   z=np.array(z), covariate_names=names,
                   y=np.array(y) if has_outcome else None,
                   ids=np.array(ids, dtype=object), metric=metric)


def read_csv(path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_csv(fh.read())


def format_csv(ds: Dataset) -> str:
    """Inverse of :func:`parse_csv`; floats are written with ``repr`` so they round-trip."""
    cx, cy = ("lon", "lat") if ds.metric == "geodesic" else ("x", "y")
    outcome_col = "y" if ds.metric == "geodesic" else "outcome"
    header = ["id", cx, cy, "z"]
    if ds.y is not None:
        header.append(outcome_col)
    header += [COVARIATE_PREFIX + nm for nm in ds.covariate_names]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for i in range(ds.n):
        row = [ds.ids[i], repr(float(ds.coords[i, 0])), repr(float(ds.coords[i, 1])), str(int(ds.z[i]))]
        if ds.y is not None:
            row.append(repr(float(ds.y[i])))
        row += [repr(float(v)) for v in ds.X[i]]
        w.writerow(row)
    return buf.getvalue()


def write_csv(ds: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(format_csv(ds))
