"""Distance-adjusted propensity score (DAPS) matching.

The pairwise cost between treated unit ``i`` and control unit ``j`` is

    w * |ps_i - ps_j| + (1 - w) * dist_ij

where ``dist_ij`` is a distance rescaled onto [0, 1]. Calipers mark cells
infeasible; matching is 1-1 without replacement, greedy or optimal. The
weight ``w`` can be picked automatically as the smallest value for which
every observed covariate is balanced after matching.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import assignment
from .balance import treated_sd
from .errors import (DegenerateCovariateError, DegenerateScaleError, InputError,
                     NoBalancedWeightError)
from .geometry import StandardizedDistanceMatrix, pairwise_distances, standardize
from .propensity import PropensityFit, fit_logistic, make_design, predict_ps

DEFAULT_W_GRID = np.round(np.linspace(0.0, 1.0, 101), 10)
DEFAULT_W_TOLERANCE = 0.001
DEFAULT_ASDM_CUTOFF = 0.1

_CALIPER_ALIASES = {
    "daps": "daps",
    "ps": "ps", "ps-component": "ps",
    "distance": "distance", "distance-component": "distance",
}


@dataclass(frozen=True)
class DapsConfig:
    """Matching options. ``w=None`` requests automatic selection of the weight."""

    w: Optional[float] = None
    caliper: Optional[float] = None
    caliper_type: str = "daps"
    distance_scheme: str = "minmax"
    algorithm: str = "optimal"
    w_method: str = "grid"
    asdm_cutoff: float = DEFAULT_ASDM_CUTOFF
    w_grid: Optional[Tuple[float, ...]] = None
    w_tolerance: float = DEFAULT_W_TOLERANCE

    def __post_init__(self):
        if self.w is not None and not 0.0 <= self.w <= 1.0:
            raise InputError(f"w must lie in [0, 1], got {self.w}")
        if self.caliper is not None and not self.caliper > 0:
            raise InputError(f"caliper must be positive, got {self.caliper}")
        if self.caliper_type not in _CALIPER_ALIASES:
            raise InputError(f"unknown caliper type {self.caliper_type!r}")
        if self.distance_scheme not in ("minmax", "ecdf"):
            raise InputError(f"unknown distance scheme {self.distance_scheme!r}")
        if self.algorithm not in ("greedy", "optimal"):
            raise InputError(f"unknown algorithm {self.algorithm!r}")
        if self.w_method not in ("grid", "bisection"):
            raise InputError(f"unknown w selection method {self.w_method!r}")
        if not self.w_tolerance > 0:
            raise InputError("w tolerance must be positive")


@dataclass(frozen=True)
class DapsMatrix:
    cost: np.ndarray
    feasible: np.ndarray
    w: float
    daps_sd: float
    ps_diff: Optional[np.ndarray] = None
    std_dist: Optional[np.ndarray] = None
    raw_distance: Optional[np.ndarray] = None
    treated_ids: Optional[np.ndarray] = None
    control_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        n_t, n_c = self.cost.shape
        if self.treated_ids is None:
            object.__setattr__(self, "treated_ids", np.arange(n_t))
        if self.control_ids is None:
            object.__setattr__(self, "control_ids", np.arange(n_c))


@dataclass(frozen=True)
class MatchedSet:
    """1-1 pairs of (treated id, control id) plus the treated ids left unmatched."""

    pairs: np.ndarray
    dropped_treated: np.ndarray
    total_cost: float
    mean_pair_distance: float
    pair_costs: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def n_pairs(self) -> int:
        return int(self.pairs.shape[0])

    @property
    def treated(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def control(self) -> np.ndarray:
        return self.pairs[:, 1]

    @property
    def failed(self) -> bool:
        return self.n_pairs == 0

    def pair_set(self) -> set:
        return {(int(t), int(c)) for t, c in self.pairs}

    def same_as(self, other: "MatchedSet") -> bool:
        return (self.pair_set() == other.pair_set()
                and set(self.dropped_treated.tolist()) == set(other.dropped_treated.tolist()))


@dataclass(frozen=True)
class WPoint:
    w: float
    max_asdm: float
    balanced: bool
    n_pairs: int


@dataclass(frozen=True)
class WSelection:
    chosen_w: float
    trajectory: List[WPoint]
    cutoff: float
    method: str
    matched: Optional[MatchedSet] = None

    def trajectory_csv(self) -> str:
        lines = ["w,max_asdm,balanced,n_pairs"]
        for p in self.trajectory:
            lines.append(f"{p.w!r},{p.max_asdm!r},{int(p.balanced)},{p.n_pairs}")
        return "\n".join(lines) + "\n"


def compute_daps(ps_treated, ps_control, std_dist, w: float) -> DapsMatrix:
    """Combine absolute PS differences and standardized distances with weight ``w``.

    Cells with a non-finite cost (e.g. distance set to infinity to forbid a
    pair) start out infeasible. ``daps_sd`` is the population standard
    deviation of the finite costs before any caliper.
    """
    ps_t = np.asarray(ps_treated, dtype=float).ravel()
    ps_c = np.asarray(ps_control, dtype=float).ravel()
    dist = np.asarray(std_dist.values if isinstance(std_dist, StandardizedDistanceMatrix)
                      else std_dist, dtype=float)
    if dist.shape != (ps_t.size, ps_c.size):
        raise InputError(
            f"distance matrix shape {dist.shape} does not match "
            f"{ps_t.size} treated x {ps_c.size} control"
        )
    if not 0.0 <= w <= 1.0:
        raise InputError(f"w must lie in [0, 1], got {w}")
    if np.any((ps_t <= 0) | (ps_t >= 1)) or np.any((ps_c <= 0) | (ps_c >= 1)):
        raise InputError("propensity scores must lie strictly inside (0, 1)")

    ps_diff = np.abs(ps_t[:, None] - ps_c[None, :])
    if w == 1.0:
        cost = ps_diff.copy()
    elif w == 0.0:
        cost = dist.copy()
    else:
        cost = w * ps_diff + (1.0 - w) * dist
    finite = np.isfinite(cost)
    daps_sd = float(cost[finite].std()) if finite.any() else 0.0
    return DapsMatrix(cost=cost, feasible=finite, w=float(w), daps_sd=daps_sd,
                      ps_diff=ps_diff, std_dist=dist)


def _finite_sd(a: np.ndarray) -> float:
    vals = a[np.isfinite(a)]
    return float(vals.std()) if vals.size else 0.0


def apply_caliper(m: DapsMatrix, config: DapsConfig, ps_diff_matrix=None, std_dist=None) -> DapsMatrix:
    """Mark cells beyond the caliper infeasible.

    For the ``daps`` type a cell is dropped when its cost exceeds
    ``caliper * daps_sd``; the component types threshold the PS-difference or
    standardized-distance matrix at ``caliper`` times that matrix's own
    standard deviation.
    """
    if config.caliper is None:
        return m
    kind = _CALIPER_ALIASES[config.caliper_type]
    k = float(config.caliper)
    if kind == "daps":
        ok = m.cost <= k * m.daps_sd
    else:
        comp = ps_diff_matrix if kind == "ps" else std_dist
        if comp is None:
            comp = m.ps_diff if kind == "ps" else m.std_dist
        if comp is None:
            raise InputError(f"{kind} caliper needs the {kind} component matrix")
        comp = np.asarray(getattr(comp, "values", comp), dtype=float)
        with np.errstate(invalid="ignore"):
            ok = comp <= k * _finite_sd(comp)
    return replace(m, feasible=m.feasible & ok)


def _to_matched(m: DapsMatrix, pos_pairs) -> MatchedSet:
    n_t = m.cost.shape[0]
    if pos_pairs:
        rows = np.array([p[0] for p in pos_pairs], dtype=int)
        cols = np.array([p[1] for p in pos_pairs], dtype=int)
    else:
        rows = cols = np.empty(0, dtype=int)
    pairs = np.column_stack([m.treated_ids[rows], m.control_ids[cols]]).astype(int)
    costs = m.cost[rows, cols]
    dropped_pos = np.setdiff1d(np.arange(n_t), rows)
    if m.raw_distance is not None and rows.size:
        mean_dist = float(m.raw_distance[rows, cols].mean())
    else:
        mean_dist = float("nan")
    return MatchedSet(pairs=pairs.reshape(-1, 2), dropped_treated=m.treated_ids[dropped_pos].astype(int),
                      total_cost=float(costs.sum()), mean_pair_distance=mean_dist,
                      pair_costs=costs)


def greedy_match(m: DapsMatrix) -> MatchedSet:
    return _to_matched(m, assignment.greedy_assign(m.cost, m.feasible))


def optimal_match(m: DapsMatrix) -> MatchedSet:
    return _to_matched(m, assignment.optimal_assign(m.cost, m.feasible))


def match(m: DapsMatrix, algorithm: str = "optimal") -> MatchedSet:
    if algorithm == "optimal":
        return optimal_match(m)
    if algorithm == "greedy":
        return greedy_match(m)
    raise InputError(f"unknown algorithm {algorithm!r}")


class DapsProblem:
    """Everything about a dataset that does not depend on ``w``.

    The propensity model and the distance matrices are computed once here and
    reused for every candidate weight.
    """

    def __init__(self, dataset, config: DapsConfig, fit: Optional[PropensityFit] = None,
                 ps=None, raw_distance=None):
        self.dataset = dataset
        self.config = config
        if ps is None:
            design = make_design(dataset.X, dataset.covariate_names)
            fit = fit if fit is not None else fit_logistic(design, dataset.z)
            ps = predict_ps(fit, design)
        self.fit = fit
        self.ps = np.asarray(ps, dtype=float)
        self.treated_rows = dataset.treated_idx
        self.control_rows = dataset.control_idx
        if self.treated_rows.size == 0 or self.control_rows.size == 0:
            raise InputError("need at least one treated and one control unit")
        if raw_distance is None:
            raw_distance = pairwise_distances(dataset.coords[self.treated_rows],
                                              dataset.coords[self.control_rows],
                                              dataset.metric).values
        self.raw_distance = np.asarray(raw_distance, dtype=float)
        try:
            self.std_dist = standardize(self.raw_distance, config.distance_scheme).values
        except DegenerateScaleError:
            # distance carries no weight at w=1, so an undefined scale is harmless
            if config.w != 1.0:
                raise
            self.std_dist = np.zeros_like(self.raw_distance)
        self._balance_X = None

    @property
    def ps_treated(self) -> np.ndarray:
        return self.ps[self.treated_rows]

    @property
    def ps_control(self) -> np.ndarray:
        return self.ps[self.control_rows]

    def matrix(self, w: float) -> DapsMatrix:
        m = compute_daps(self.ps_treated, self.ps_control, self.std_dist, w)
        m = replace(m, raw_distance=self.raw_distance,
                    treated_ids=self.treated_rows, control_ids=self.control_rows)
        return apply_caliper(m, self.config)

    def match(self, w: float) -> MatchedSet:
        return match(self.matrix(w), self.config.algorithm)

    def max_asdm(self, matched: MatchedSet) -> float:
        """Largest post-match ASDM over the observed covariates (inf if nothing matched)."""
        if matched.n_pairs == 0:
            return float("inf")
        if self._balance_X is None:
            X = self.dataset.X
            scale = treated_sd(X, self.dataset.z)
            if np.any(~(scale > 0)):
                raise DegenerateCovariateError("a covariate has zero treated-group spread")
            self._balance_X = (X, scale)
        X, scale = self._balance_X
        diff = X[matched.treated].mean(axis=0) - X[matched.control].mean(axis=0)
        return float(np.max(np.abs(diff) / scale))

    def evaluate(self, w: float, cutoff: float) -> Tuple[WPoint, MatchedSet]:
        matched = self.match(w)
        worst = self.max_asdm(matched)
        return WPoint(w=float(w), max_asdm=worst, balanced=bool(worst <= cutoff),
                      n_pairs=matched.n_pairs), matched


def _grid_search(evaluate: Callable[[float], Tuple[WPoint, object]], grid: Sequence[float],
                 exhaustive: bool = True):
    trajectory, chosen = [], None
    for w in grid:
        point, matched = evaluate(float(w))
        trajectory.append(point)
        if point.balanced and chosen is None:
            chosen = (float(w), matched)
            if not exhaustive:
                break
    return chosen, trajectory


def _bisection_search(evaluate: Callable[[float], Tuple[WPoint, object]], tolerance: float):
    """Start at 0.5; at step k move by 1/2**(k+1), down when balanced and up otherwise.

    Stops once the step just taken is below ``tolerance``. Returns the last
    balanced weight visited (with its match) and the visited trajectory.
    """
    trajectory, chosen = [], None
    w, k = 0.5, 1
    while True:
        point, matched = evaluate(w)
        trajectory.append(point)
        if point.balanced:
            chosen = (w, matched)
        if 1.0 / 2 ** k < tolerance:
            break
        step = 1.0 / 2 ** (k + 1)
        w = w - step if point.balanced else w + step
        k += 1
    return chosen, trajectory


def _problem(dataset, config: DapsConfig):
    return dataset if isinstance(dataset, DapsProblem) else DapsProblem(dataset, config)


def select_w_grid(dataset, config: DapsConfig = DapsConfig(), w_grid: Optional[Sequence[float]] = None,
                  asdm_cutoff: Optional[float] = None, exhaustive: bool = True) -> WSelection:
    """Smallest grid weight whose matched set balances every observed covariate.

    With ``exhaustive=False`` the search stops at the first balanced weight
    and the trajectory ends there.
    """
    prob = _problem(dataset, config)
    cutoff = prob.config.asdm_cutoff if asdm_cutoff is None else asdm_cutoff
    grid = w_grid if w_grid is not None else (config.w_grid or DEFAULT_W_GRID)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) < 0) or grid.min() < 0 or grid.max() > 1:
        raise InputError("w grid must be nonempty, ascending and inside [0, 1]")
    chosen, trajectory = _grid_search(lambda w: prob.evaluate(w, cutoff), grid, exhaustive)
    if chosen is None:
        raise NoBalancedWeightError(
            f"no grid weight balances all covariates at ASDM <= {cutoff}", trajectory)
    return WSelection(chosen_w=chosen[0], trajectory=trajectory, cutoff=cutoff,
                      method="grid", matched=chosen[1])


def select_w_bisection(dataset, config: DapsConfig = DapsConfig(), tolerance: Optional[float] = None,
                       asdm_cutoff: Optional[float] = None) -> WSelection:
    """Bisection over ``w`` assuming balance improves as ``w`` grows."""
    prob = _problem(dataset, config)
    cutoff = prob.config.asdm_cutoff if asdm_cutoff is None else asdm_cutoff
    tol = prob.config.w_tolerance if tolerance is None else tolerance
    if not tol > 0:
        raise InputError("tolerance must be positive")
    chosen, trajectory = _bisection_search(lambda w: prob.evaluate(w, cutoff), tol)
    if chosen is None:
        raise NoBalancedWeightError(
            f"no visited weight balances all covariates at ASDM <= {cutoff}", trajectory)
    return WSelection(chosen_w=chosen[0], trajectory=trajectory, cutoff=cutoff,
                      method="bisection", matched=chosen[1])


@dataclass
class DapsmResult:
    fit: Optional[PropensityFit]
    ps: np.ndarray
    matched: MatchedSet
    w: float
    matrix: DapsMatrix
    w_selection: Optional[WSelection] = None
    raw_distance: Optional[np.ndarray] = None
    std_dist: Optional[np.ndarray] = None


def dapsm(dataset, config: DapsConfig = DapsConfig(), exhaustive: bool = True) -> DapsmResult:
    """Fit the PS on the observed covariates, build DAPS, pick ``w`` if needed, and match."""
    prob = DapsProblem(dataset, config)
    selection = None
    if config.w is None:
        if config.w_method == "grid":
            selection = select_w_grid(prob, config, exhaustive=exhaustive)
        else:
            selection = select_w_bisection(prob, config)
        w = selection.chosen_w
    else:
        w = float(config.w)
    m = prob.matrix(w)
    matched = selection.matched if selection is not None else match(m, config.algorithm)
    return DapsmResult(fit=prob.fit, ps=prob.ps, matched=matched, w=w, matrix=m,
                       w_selection=selection, raw_distance=prob.raw_distance,
                       std_dist=prob.std_dist)
