"""Baseline matching methods used alongside DAPSm.

All of them match 1-1 without replacement with the optimal solver on the
absolute propensity-score difference; they differ in how the propensity
score is modelled and in which pairs are allowed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import assignment
from .daps import MatchedSet
from .errors import EstimationError, InputError
from .estimation import EffectEstimate, outcome_regression
from .geometry import pairwise_distances
from .propensity import augment_with_coordinates, fit_logistic, make_design, predict_ps

KINDS = ("gold-outcome", "gold-ps", "naive", "naive-coords", "distance-caliper")


@dataclass(frozen=True)
class ComparatorSpec:
    kind: str
    distance_quantile: Optional[float] = None
    ps_caliper: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown comparator {self.kind!r}")
        if (self.kind == "distance-caliper") != (self.distance_quantile is not None):
            raise InputError("distance_quantile is required for, and only for, distance-caliper")
        if self.distance_quantile is not None and not 0 < self.distance_quantile < 1:
            raise InputError("distance_quantile must lie in (0, 1)")
        if self.ps_caliper is not None and not self.ps_caliper > 0:
            raise InputError("ps_caliper must be positive")


def treated_control_distances(dataset) -> np.ndarray:
    return pairwise_distances(dataset.coords[dataset.treated_idx],
                              dataset.coords[dataset.control_idx], dataset.metric).values


def ps_match(dataset, ps, ps_caliper: Optional[float] = None, allowed=None,
             raw_distance=None) -> MatchedSet:
    """Optimal 1-1 matching on |PS difference|.

    ``ps_caliper`` is in standard deviations of the PS estimates over all
    units; ``allowed`` is an extra treated-by-control feasibility mask.
    """
    ps = np.asarray(ps, dtype=float)
    t_rows, c_rows = dataset.treated_idx, dataset.control_idx
    if t_rows.size == 0 or c_rows.size == 0:
        raise InputError("need at least one treated and one control unit")
    diff = np.abs(ps[t_rows][:, None] - ps[c_rows][None, :])
    feasible = np.ones(diff.shape, dtype=bool)
    if ps_caliper is not None:
        feasible &= diff <= ps_caliper * ps.std()
    if allowed is not None:
        feasible &= np.asarray(allowed, dtype=bool)
    pos = assignment.optimal_assign(diff, feasible)
    rows = np.array([p[0] for p in pos], dtype=int)
    cols = np.array([p[1] for p in pos], dtype=int)
    pairs = np.column_stack([t_rows[rows], c_rows[cols]]).reshape(-1, 2).astype(int)
    if raw_distance is None:
        raw_distance = treated_control_distances(dataset)
    mean_dist = float(raw_distance[rows, cols].mean()) if rows.size else float("nan")
    costs = diff[rows, cols]
    return MatchedSet(pairs=pairs, dropped_treated=np.setdiff1d(t_rows, pairs[:, 0]),
                      total_cost=float(costs.sum()), mean_pair_distance=mean_dist,
                      pair_costs=costs)


def fitted_ps(dataset, extra_columns: Sequence[str] = (), with_coordinates: bool = False):
    names = list(dataset.covariate_names) + list(extra_columns)
    X = np.column_stack([dataset.covariate(nm) for nm in names]) if names else np.empty((dataset.n, 0))
    design = make_design(X, names)
    if with_coordinates:
        design = augment_with_coordinates(design, dataset.coords)
    fit = fit_logistic(design, dataset.z)
    return fit, predict_ps(fit, design)


def naive_match(dataset, ps_caliper: Optional[float] = None) -> MatchedSet:
    _, ps = fitted_ps(dataset)
    return ps_match(dataset, ps, ps_caliper)


def naive_coords_match(dataset, ps_caliper: Optional[float] = None) -> MatchedSet:
    _, ps = fitted_ps(dataset, with_coordinates=True)
    return ps_match(dataset, ps, ps_caliper)


def distance_threshold(raw_distance, quantile: float) -> float:
    return float(np.quantile(np.asarray(raw_distance, dtype=float).ravel(), quantile))


def distance_caliper_match(dataset, distance_quantile: float,
                           ps_caliper: Optional[float] = None) -> MatchedSet:
    """PS matching restricted to pairs no farther apart than a distance quantile."""
    if not 0 < distance_quantile < 1:
        raise InputError("distance_quantile must lie in (0, 1)")
    raw = treated_control_distances(dataset)
    allowed = raw <= distance_threshold(raw, distance_quantile)
    _, ps = fitted_ps(dataset)
    return ps_match(dataset, ps, ps_caliper, allowed=allowed, raw_distance=raw)


def gold_ps_match(dataset, ps_caliper: Optional[float] = None,
                  confounders: Sequence[str] = ("U",)) -> MatchedSet:
    """PS matching with the true treatment model (observed covariates plus ``confounders``).

    Confounders absent from the dataset are skipped.
    """
    present = [c for c in confounders if c in dataset.extra and c not in dataset.covariate_names]
    _, ps = fitted_ps(dataset, extra_columns=present)
    return ps_match(dataset, ps, ps_caliper)


def gold_outcome_estimate(dataset, confounders: Sequence[str] = ("U",)) -> EffectEstimate:
    """Treatment coefficient of the correctly specified outcome regression on all units."""
    missing = [c for c in confounders if c not in dataset.extra and c not in dataset.covariate_names]
    if missing:
        raise InputError(f"dataset lacks confounders {missing}")
    try:
        return outcome_regression(dataset, list(dataset.covariate_names) + list(confounders))
    except EstimationError as exc:
        raise InputError(str(exc)) from exc


def run_comparator(spec: ComparatorSpec, dataset) -> MatchedSet:
    if spec.kind == "naive":
        return naive_match(dataset, spec.ps_caliper)
    if spec.kind == "naive-coords":
        return naive_coords_match(dataset, spec.ps_caliper)
    if spec.kind == "distance-caliper":
        return distance_caliper_match(dataset, spec.distance_quantile, spec.ps_caliper)
    if spec.kind == "gold-ps":
        return gold_ps_match(dataset, spec.ps_caliper)
    raise InputError(f"{spec.kind} does not produce a matched set")
