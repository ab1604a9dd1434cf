"""Treated-by-control distance matrices and their rescaling onto [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateScaleError, InputError

# Mean earth radius (IUGG), km.
EARTH_RADIUS_KM = 6371.0088

Metric = Literal["euclidean", "geodesic"]
Scheme = Literal["minmax", "ecdf"]


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    metric: str

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class StandardizedDistanceMatrix:
    values: np.ndarray
    scheme: str

    @property
    def shape(self):
        return self.values.shape


def _as_locations(points, name: str) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 2:
        arr = arr.reshape(1, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InputError(f"{name} must have shape (n, 2), got {arr.shape}")
    if arr.shape[0] == 0:
        raise InputError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite coordinates")
    return arr


def _check_lonlat(arr: np.ndarray, name: str) -> None:
    lon, lat = arr[:, 0], arr[:, 1]
    if np.any(np.abs(lat) > 90):
        raise InputError(f"{name}: latitude outside [-90, 90]")
    if np.any(np.abs(lon) > 180):
        raise InputError(f"{name}: longitude outside [-180, 180]")


def haversine(lonlat_a: np.ndarray, lonlat_b: np.ndarray,
              radius: float = EARTH_RADIUS_KM) -> np.ndarray:
    """Great-circle distances (km) between every row of ``a`` and of ``b``.

    Both inputs are ``(n, 2)`` arrays of (longitude, latitude) in degrees.
    """
    a = np.radians(lonlat_a)
    b = np.radians(lonlat_b)
    lat1 = a[:, 1][:, None]
    lat2 = b[:, 1][None, :]
    dlat = lat2 - lat1
    dlon = b[:, 0][None, :] - a[:, 0][:, None]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def pairwise_distances(treated, control, metric: Metric = "euclidean") -> DistanceMatrix:
    """Raw distances between each treated location (rows) and control location (columns).

    ``metric="geodesic"`` interprets coordinates as (longitude, latitude) in
    degrees and returns kilometres; ``"euclidean"`` uses the coordinates as is.
    """
    t = _as_locations(treated, "treated")
    c = _as_locations(control, "control")
    if metric == "euclidean":
        values = cdist(t, c)
    elif metric == "geodesic":
        _check_lonlat(t, "treated")
        _check_lonlat(c, "control")
        values = haversine(t, c)
    else:
        raise InputError(f"unknown metric {metric!r}")
    return DistanceMatrix(values=values, metric=metric)


def _values(d) -> np.ndarray:
    arr = np.asarray(d.values if isinstance(d, DistanceMatrix) else d, dtype=float)
    if arr.ndim != 2:
        arr = np.atleast_2d(arr)
    if arr.size == 0:
        raise InputError("distance matrix is empty")
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise InputError("distances must be nonnegative")
    return arr


def standardize_minmax(d) -> StandardizedDistanceMatrix:
    """Map distances linearly so the closest treated-control pair is 0 and the farthest 1.

    Infinite entries (forbidden pairs) are ignored when finding the range and
    stay infinite.
    """
    arr = _values(d)
    finite = arr[np.isfinite(arr)]
    if finite.size == 0:
        raise DegenerateScaleError("no finite distances to standardize")
    lo, hi = finite.min(), finite.max()
    if hi == lo:
        raise DegenerateScaleError(
            "all treated-control distances are equal; min-max scale is undefined"
        )
    out = (arr - lo) / (hi - lo)
    return StandardizedDistanceMatrix(values=out, scheme="minmax")


def standardize_ecdf(d) -> StandardizedDistanceMatrix:
    """Replace each distance by the share of all treated-control pairs at or below it."""
    arr = _values(d)
    flat = np.sort(arr, axis=None)
    counts = np.searchsorted(flat, arr, side="right")
    out = counts / flat.size
    out[~np.isfinite(arr)] = np.inf
    return StandardizedDistanceMatrix(values=out.astype(float), scheme="ecdf")


def standardize(d, scheme: Scheme = "minmax") -> StandardizedDistanceMatrix:
    if scheme == "minmax":
        return standardize_minmax(d)
    if scheme == "ecdf":
        return standardize_ecdf(d)
    raise InputError(f"unknown distance scheme {scheme!r}")
