"""Covariate balance diagnostics based on standardized differences of means."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DegenerateCovariateError, InputError


def asdm(values, treated_ids, control_ids, scale_sd: float) -> float:
    """Absolute difference of group means divided by ``scale_sd``."""
    values = np.asarray(values, dtype=float)
    treated_ids = np.asarray(treated_ids, dtype=int)
    control_ids = np.asarray(control_ids, dtype=int)
    if treated_ids.size == 0 or control_ids.size == 0:
        raise InputError("both groups must be nonempty")
    if not scale_sd > 0:
        raise DegenerateCovariateError(f"scale_sd must be positive, got {scale_sd}")
    return float(abs(values[treated_ids].mean() - values[control_ids].mean()) / scale_sd)


def treated_sd(X, z) -> np.ndarray:
    """Sample standard deviation of each column among treated units."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    tr = X[np.asarray(z) == 1]
    if tr.shape[0] < 2:
        raise DegenerateCovariateError("need at least two treated units for a scale")
    return tr.std(axis=0, ddof=1)


def standardized_differences(X, treated_rows, control_rows, scale) -> np.ndarray:
    """Signed (treated minus control) mean difference per column over ``scale``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    diff = X[treated_rows].mean(axis=0) - X[control_rows].mean(axis=0)
    return diff / scale


@dataclass(frozen=True)
class CovariateBalance:
    name: str
    smd_before: float
    smd_after: float

    @property
    def asdm_before(self) -> float:
        return abs(self.smd_before)

    @property
    def asdm_after(self) -> float:
        return abs(self.smd_after)


@dataclass(frozen=True)
class BalanceReport:
    per_covariate: List[CovariateBalance]
    cutoff: float
    n_imbalanced_before: int
    n_imbalanced_after: Optional[int]
    mean_asdm_after: float
    max_asdm_after: float
    matched_empty: bool = False
    n_pairs: int = 0
    notes: List[str] = field(default_factory=list)

    def asdm_after(self, name: str) -> float:
        return self._lookup(name).asdm_after

    def asdm_before(self, name: str) -> float:
        return self._lookup(name).asdm_before

    def _lookup(self, name: str) -> CovariateBalance:
        for cb in self.per_covariate:
            if cb.name == name:
                return cb
        raise KeyError(name)

    @property
    def all_balanced(self) -> bool:
        return not self.matched_empty and self.n_imbalanced_after == 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("covariate,smd_before,asdm_before,smd_after,asdm_after,"
                  "imbalanced_before,imbalanced_after\n")
        for cb in self.per_covariate:
            if self.matched_empty:
                after = "NA,NA"
                flag = "NA"
            else:
                after = f"{cb.smd_after!r},{cb.asdm_after!r}"
                flag = str(int(cb.asdm_after > self.cutoff))
            buf.write(f"{cb.name},{cb.smd_before!r},{cb.asdm_before!r},{after},"
                      f"{int(cb.asdm_before > self.cutoff)},{flag}\n")
        return buf.getvalue()


def balance_report(dataset, matched, cutoff: float = 0.1,
                   covariates: Optional[Sequence[str]] = None) -> BalanceReport:
    """ASDM per covariate on the full data and on the matched units.

    Both columns are scaled by the full-data treated-group sample standard
    deviation of each covariate. ``covariates`` defaults to the dataset's
    observed covariates and may name extra columns (e.g. ``"U"``).
    """
    names = list(dataset.covariate_names if covariates is None else covariates)
    if not names:
        raise InputError("no covariates to assess")
    X = np.column_stack([dataset.covariate(nm) for nm in names])
    scale = treated_sd(X, dataset.z)
    bad = [nm for nm, s in zip(names, scale) if not s > 0]
    if bad:
        raise DegenerateCovariateError(f"zero treated-group spread for covariates {bad}")

    before = standardized_differences(X, dataset.treated_idx, dataset.control_idx, scale)
    pairs = np.asarray(matched.pairs, dtype=int).reshape(-1, 2)
    n = dataset.n
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        raise InputError("matched set references units outside the dataset")
    empty = pairs.shape[0] == 0
    if empty:
        after = np.full(len(names), np.nan)
    else:
        after = standardized_differences(X, pairs[:, 0], pairs[:, 1], scale)

    rows = [CovariateBalance(nm, float(b), float(a)) for nm, b, a in zip(names, before, after)]
    n_before = int(np.sum(np.abs(before) > cutoff))
    if empty:
        return BalanceReport(rows, cutoff, n_before, None, float("nan"), float("nan"),
                             matched_empty=True, n_pairs=0,
                             notes=["matched set is empty; after-matching balance undefined"])
    abs_after = np.abs(after)
    return BalanceReport(rows, cutoff, n_before, int(np.sum(abs_after > cutoff)),
                         float(abs_after.mean()), float(abs_after.max()),
                         matched_empty=False, n_pairs=int(pairs.shape[0]))
