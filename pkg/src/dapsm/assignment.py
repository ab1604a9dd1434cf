"""One-to-one assignment of treated rows to control columns of a cost matrix.

Both solvers take a cost matrix and a boolean feasibility mask of the same
shape and return ``(row, column)`` position pairs sorted by row.
"""

from __future__ import annotations

from typing import List, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

Pairs = List[Tuple[int, int]]


def _prepare(cost, feasible):
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError("cost must be a 2-d matrix")
    if feasible is None:
        feasible = np.isfinite(cost)
    feasible = np.asarray(feasible, dtype=bool) & np.isfinite(cost)
    if feasible.shape != cost.shape:
        raise ValueError("feasibility mask shape differs from cost shape")
    return cost, feasible


def greedy_assign(cost, feasible=None) -> Pairs:
    """Greedy rounds over row minima.

    Each round takes the minimum feasible cost of every remaining row, drops
    rows with no feasible control, orders rows by that minimum and matches
    them in order until a control that is already taken in this round comes
    up. Matched rows and columns are then removed and the next round starts.
    Ties go to the lower row, then the lower column.
    """
    cost, feasible = _prepare(cost, feasible)
    work = np.where(feasible, cost, np.inf)
    rows = np.arange(cost.shape[0])
    cols = np.arange(cost.shape[1])
    pairs: Pairs = []

    while rows.size and cols.size:
        sub = work[np.ix_(rows, cols)]
        best = np.argmin(sub, axis=1)
        minima = sub[np.arange(rows.size), best]
        keep = np.isfinite(minima)
        rows, best, minima = rows[keep], best[keep], minima[keep]
        if rows.size == 0:
            break
        order = np.lexsort((rows, minima))
        taken = set()
        matched_rows = []
        for k in order:
            c = cols[best[k]]
            if c in taken:
                break
            taken.add(c)
            matched_rows.append(rows[k])
            pairs.append((int(rows[k]), int(c)))
        rows = np.setdiff1d(rows, matched_rows)
        cols = np.setdiff1d(cols, list(taken))

    pairs.sort()
    return pairs


def optimal_assign(cost, feasible=None) -> Pairs:
    """Minimum-cost assignment that first maximizes the number of matched rows.

    Every row gets a private dummy column whose cost exceeds the cost of any
    complete set of real matches, so leaving a row unmatched is only chosen
    when no feasible alternative exists. Infeasible cells are excluded.
    """
    cost, feasible = _prepare(cost, feasible)
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0 or not feasible.any():
        return []
    finite = np.where(feasible, cost, 0.0)
    shift = finite[feasible].min()
    real = np.where(feasible, cost - shift, np.inf)
    row_max = np.where(feasible, real, 0.0).max(axis=1)
    penalty = 1.0 + 2.0 * row_max.sum()

    dummy = np.full((n_rows, n_rows), np.inf)
    np.fill_diagonal(dummy, penalty)
    r, c = linear_sum_assignment(np.hstack([real, dummy]))
    pairs = [(int(i), int(j)) for i, j in zip(r, c) if j < n_cols]
    pairs.sort()
    return pairs
