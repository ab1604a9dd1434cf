"""Logistic treatment-assignment model fitted by iteratively reweighted least squares."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, InputError, RankError, SeparationError

MAX_ITER = 50
SCORE_TOL = 1e-8
STEP_TOL = 1e-10
SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class DesignMatrix:
    """Model matrix whose first column is always the intercept."""

    values: np.ndarray
    names: tuple

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PropensityFit:
    coefficients: np.ndarray
    fitted: np.ndarray
    converged: bool
    iterations: int
    gradient_norm: float
    names: tuple = field(default=())

    def coef(self, name: str) -> float:
        return float(self.coefficients[self.names.index(name)])


def make_design(covariates, names: Optional[Sequence[str]] = None) -> DesignMatrix:
    """Prepend an intercept column to an ``(n, p)`` covariate array."""
    X = np.asarray(covariates, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if names is None:
        names = [f"x{k + 1}" for k in range(X.shape[1])]
    names = tuple(names)
    if len(names) != X.shape[1]:
        raise InputError("number of names does not match number of columns")
    if not np.all(np.isfinite(X)):
        raise InputError("design contains missing or non-finite values")
    values = np.column_stack([np.ones(X.shape[0]), X])
    return DesignMatrix(values=values, names=("intercept",) + names)


def augment_with_coordinates(design: DesignMatrix, locations,
                             names: Sequence[str] = ("coord_x", "coord_y")) -> DesignMatrix:
    """Append the two raw coordinate columns to a design."""
    loc = np.asarray(locations, dtype=float)
    if loc.shape != (design.n_rows, 2):
        raise InputError(
            f"locations shape {loc.shape} does not match design rows ({design.n_rows}, 2)"
        )
    return DesignMatrix(values=np.column_stack([design.values, loc]),
                        names=design.names + tuple(names))


def log_likelihood(beta: np.ndarray, X: np.ndarray, z: np.ndarray) -> float:
    eta = X @ beta
    # log(1 + exp(eta)) computed stably
    return float(np.sum(z * eta - np.logaddexp(0.0, eta)))


def score(beta: np.ndarray, X: np.ndarray, z: np.ndarray) -> np.ndarray:
    return X.T @ (z - expit(X @ beta))


def _check_inputs(design: DesignMatrix, z) -> tuple:
    X = np.asarray(design.values, dtype=float)
    z = np.asarray(z, dtype=float).ravel()
    if X.shape[0] != z.shape[0]:
        raise InputError("design and treatment vector lengths differ")
    if not np.all((z == 0) | (z == 1)):
        raise InputError("treatment must be coded 0/1")
    if z.min() == z.max():
        raise InputError("treatment vector contains a single class")
    if X.shape[0] <= X.shape[1]:
        raise InputError("need more units than design columns")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankError("design matrix is rank deficient (constant or collinear columns)")
    return X, z


def fit_logistic(design: DesignMatrix, z, max_iter: int = MAX_ITER,
                 score_tol: float = SCORE_TOL, step_tol: float = STEP_TOL) -> PropensityFit:
    """Maximum-likelihood logistic regression by Newton/IRLS with step halving.

    Converged when the score norm is at most ``score_tol`` and the last
    Newton step is at most ``step_tol``.
    """
    X, z = _check_inputs(design, z)
    beta = np.zeros(X.shape[1])
    ll = log_likelihood(beta, X, z)
    grad = score(beta, X, z)

    for it in range(1, max_iter + 1):
        p = expit(X @ beta)
        W = p * (1.0 - p)
        H = X.T @ (X * W[:, None])
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]

        t = 1.0
        for _ in range(30):
            candidate = beta + t * step
            ll_new = log_likelihood(candidate, X, z)
            if ll_new >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        beta, ll = candidate, ll_new
        grad = score(beta, X, z)
        gnorm = float(np.linalg.norm(grad))
        snorm = float(np.linalg.norm(t * step))

        if np.max(np.abs(beta)) > SEPARATION_BOUND:
            raise SeparationError(
                f"coefficient magnitude exceeded {SEPARATION_BOUND} at iteration {it}; "
                "treatment appears separable"
            )
        if gnorm <= score_tol and snorm <= step_tol:
            return PropensityFit(coefficients=beta, fitted=expit(X @ beta), converged=True,
                                 iterations=it, gradient_norm=gnorm, names=design.names)

    raise ConvergenceError(
        f"IRLS did not converge in {max_iter} iterations (score norm {gnorm:.3g})"
    )


def predict_ps(fit: PropensityFit, design: DesignMatrix) -> np.ndarray:
    """Inverse-logit of the linear predictor for each row of ``design``."""
    if design.n_cols != fit.coefficients.shape[0]:
        raise InputError(
            f"design has {design.n_cols} columns, fit expects {fit.coefficients.shape[0]}"
        )
    if fit.names and design.names != fit.names:
        raise InputError("design column layout does not match the fitted model")
    ps = expit(design.values @ fit.coefficients)
    return np.clip(ps, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
