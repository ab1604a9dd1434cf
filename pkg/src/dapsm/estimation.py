"""Treatment-effect estimates on matched data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import EstimationError, InputError


@dataclass(frozen=True)
class EffectEstimate:
    estimate: float
    ci_lower: float
    ci_upper: float
    standard_error: float
    n_pairs: int
    method: str
    level: float = 0.95
    degenerate: bool = False

    def as_row(self) -> dict:
        return {"method": self.method, "estimate": self.estimate, "se": self.standard_error,
                "ci_lower": self.ci_lower, "ci_upper": self.ci_upper,
                "n_pairs": self.n_pairs, "level": self.level, "degenerate": self.degenerate}


def _pairs(matched) -> np.ndarray:
    pairs = np.asarray(matched.pairs, dtype=int).reshape(-1, 2)
    if pairs.shape[0] == 0:
        raise EstimationError("matched set is empty")
    return pairs


def _outcome(dataset) -> np.ndarray:
    if dataset.y is None:
        raise InputError("dataset has no outcome")
    return dataset.y


def att_diff_means(dataset, matched, level: float = 0.95) -> EffectEstimate:
    """Mean treated outcome minus mean control outcome over matched pairs.

    The standard error is the sample SD of the within-pair differences over
    sqrt(n_pairs); the interval uses normal quantiles. A zero or undefined
    SE is flagged ``degenerate``.
    """
    pairs = _pairs(matched)
    y = _outcome(dataset)
    diffs = y[pairs[:, 0]] - y[pairs[:, 1]]
    n = diffs.size
    est = float(y[pairs[:, 0]].mean() - y[pairs[:, 1]].mean())
    if n > 1:
        se = float(diffs.std(ddof=1) / np.sqrt(n))
    else:
        se = float("nan")
    degenerate = not se > 0
    if np.isnan(se):
        lo = hi = est
    else:
        q = stats.norm.ppf(0.5 + level / 2)
        lo, hi = est - q * se, est + q * se
    return EffectEstimate(est, lo, hi, se, n, "diff-means", level, degenerate)


def ols(design: np.ndarray, y: np.ndarray):
    """Least squares coefficients, classical standard errors and residual df."""
    n, p = design.shape
    if n <= p or np.linalg.matrix_rank(design) < p:
        raise EstimationError("regression design is rank deficient")
    q, r = np.linalg.qr(design)
    beta = np.linalg.solve(r, q.T @ y)
    resid = y - design @ beta
    df = n - p
    sigma2 = float(resid @ resid) / df
    r_inv = np.linalg.solve(r, np.eye(p))
    cov = sigma2 * (r_inv @ r_inv.T)
    return beta, np.sqrt(np.diag(cov)), df


def _t_estimate(beta, se, df, k, n_pairs, method, level) -> EffectEstimate:
    est, s = float(beta[k]), float(se[k])
    tq = stats.t.ppf(0.5 + level / 2, df)
    return EffectEstimate(est, est - tq * s, est + tq * s, s, n_pairs, method, level,
                          degenerate=not s > 0)


def att_linear_adjusted(dataset, matched, covariate_names: Sequence[str] = (),
                        level: float = 0.95) -> EffectEstimate:
    """Coefficient of treatment in an OLS fit of Y on (1, Z, covariates) over matched units."""
    pairs = _pairs(matched)
    y = _outcome(dataset)
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = [np.ones(rows.size), dataset.z[rows].astype(float)]
    cols += [dataset.covariate(nm)[rows] for nm in covariate_names]
    beta, se, df = ols(np.column_stack(cols), y[rows])
    return _t_estimate(beta, se, df, 1, pairs.shape[0], "linear-adjusted", level)


def outcome_regression(dataset, covariate_names: Sequence[str], level: float = 0.95) -> EffectEstimate:
    """Treatment coefficient from OLS of Y on (1, Z, covariates) over all units."""
    y = _outcome(dataset)
    cols = [np.ones(dataset.n), dataset.z.astype(float)]
    cols += [dataset.covariate(nm) for nm in covariate_names]
    beta, se, df = ols(np.column_stack(cols), y)
    return _t_estimate(beta, se, df, 1, int(dataset.z.sum()), "outcome-model", level)
