"""Distance, nearest-neighbour and ECDF kernels.

Geographic coordinates are ``(lon, lat)`` in degrees and distances between
them are great-circle (haversine) distances in metres on a sphere of radius
6,371,000 m. Projected coordinates use plain Euclidean distance in map units.
All nearest-neighbour answers are exact; ties go to the lowest reference index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree

EARTH_RADIUS_M = 6_371_000.0

GEOGRAPHIC = "geographic"
PROJECTED = "projected"

# above this many reference rows (and enough queries) the kd-tree path is used
_KD_MIN_REFERENCE = 1024
_KD_MIN_QUERIES = 64
_CHUNK_ELEMENTS = 1 << 22


@dataclass
class PointSet:
    """Sample locations, optionally time-stamped."""

    coords: np.ndarray
    crs_kind: str = PROJECTED
    time: Optional[np.ndarray] = None

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[1] != 2:
            coords = coords.reshape(-1, 2)
        if not np.all(np.isfinite(coords)):
            raise ValueError("point coordinates must be finite")
        if self.crs_kind not in (GEOGRAPHIC, PROJECTED):
            raise ValueError(f"crs_kind must be 'geographic' or 'projected', got {self.crs_kind!r}")
        if self.crs_kind == GEOGRAPHIC:
            _check_lonlat(coords)
        self.coords = coords
        if self.time is not None:
            time = np.asarray(self.time, dtype=np.int64).ravel()
            if time.shape[0] != coords.shape[0]:
                raise ValueError("time must have one entry per point")
            self.time = time

    def __len__(self):
        return self.coords.shape[0]

    def subset(self, rows) -> "PointSet":
        rows = np.asarray(rows, dtype=np.intp)
        time = None if self.time is None else self.time[rows]
        return PointSet(self.coords[rows], self.crs_kind, time)

    @property
    def metric(self) -> str:
        return "haversine" if self.crs_kind == GEOGRAPHIC else "euclidean"


def _check_lonlat(coords: np.ndarray) -> None:
    lon, lat = coords[:, 0], coords[:, 1]
    if np.any(np.abs(lon) > 180.0) or np.any(np.abs(lat) > 90.0):
        raise ValueError("geographic coordinates out of range (lon in [-180, 180], lat in [-90, 90])")


# ---------------------------------------------------------------------------
# exact pairwise metrics


def _euclidean_block(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    diff = Q[:, None, :] - R[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def _haversine_block(Q: np.ndarray, R: np.ndarray) -> np.ndarray:
    lon1 = np.radians(Q[:, 0])[:, None]
    lat1 = np.radians(Q[:, 1])[:, None]
    lon2 = np.radians(R[:, 0])[None, :]
    lat2 = np.radians(R[:, 1])[None, :]
    a = np.sin((lat2 - lat1) / 2.0) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


_BLOCKS = {"euclidean": _euclidean_block, "haversine": _haversine_block}


def pairwise_distances(Q, R, metric: str = "euclidean") -> np.ndarray:
    """Dense exact distance matrix between rows of ``Q`` and ``R``."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    block = _BLOCKS[metric]
    out = np.empty((Q.shape[0], R.shape[0]))
    step = max(1, _CHUNK_ELEMENTS // max(1, R.shape[0] * Q.shape[1]))
    for start in range(0, Q.shape[0], step):
        out[start:start + step] = block(Q[start:start + step], R)
    return out


def distance(p, q, crs_kind: str = PROJECTED) -> float:
    """Distance between two points (metres if geographic, map units otherwise)."""
    p = np.asarray(p, dtype=np.float64).reshape(1, 2)
    q = np.asarray(q, dtype=np.float64).reshape(1, 2)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise ValueError("coordinates must be finite")
    if crs_kind == GEOGRAPHIC:
        _check_lonlat(np.vstack([p, q]))
        return float(_haversine_block(p, q)[0, 0])
    if crs_kind != PROJECTED:
        raise ValueError(f"unknown crs_kind {crs_kind!r}")
    return float(_euclidean_block(p, q)[0, 0])


# ---------------------------------------------------------------------------
# nearest neighbours


def _embed(X: np.ndarray, metric: str) -> np.ndarray:
    if metric == "haversine":
        lon, lat = np.radians(X[:, 0]), np.radians(X[:, 1])
        return np.column_stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
    return X


def _embed_radius(d: np.ndarray, metric: str) -> np.ndarray:
    if metric == "haversine":
        return 2.0 * np.sin(np.minimum(d / (2.0 * EARTH_RADIUS_M), np.pi / 2))
    return d


def _nearest_brute(Q, R, metric, exclude_self):
    nq = Q.shape[0]
    idx = np.empty(nq, dtype=np.intp)
    dist = np.empty(nq)
    block = _BLOCKS[metric]
    step = max(1, _CHUNK_ELEMENTS // max(1, R.shape[0] * Q.shape[1]))
    for start in range(0, nq, step):
        d = block(Q[start:start + step], R)
        if exclude_self:
            rows = np.arange(d.shape[0])
            d[rows, rows + start] = np.inf
        j = np.argmin(d, axis=1)  # first minimum = lowest index
        idx[start:start + step] = j
        dist[start:start + step] = d[np.arange(d.shape[0]), j]
    return idx, dist


def _nearest_kd(Q, R, metric, exclude_self):
    block = _BLOCKS[metric]
    EQ, ER = _embed(Q, metric), _embed(R, metric)
    tree = cKDTree(ER)
    k = 2 if exclude_self else 1
    _, cand = tree.query(EQ, k=k)
    cand = np.asarray(cand).reshape(Q.shape[0], k)
    if exclude_self:
        own = np.arange(Q.shape[0])
        first = np.where(cand[:, 0] == own, cand[:, 1], cand[:, 0])
    else:
        first = cand[:, 0]
    # exact distance to the kd candidate bounds the true nearest distance
    bound = np.array([block(Q[i:i + 1], R[first[i]:first[i] + 1])[0, 0] for i in range(Q.shape[0])])
    radius = _embed_radius(bound, metric) * (1.0 + 1e-9) + 1e-12
    balls = tree.query_ball_point(EQ, radius)
    idx = np.empty(Q.shape[0], dtype=np.intp)
    dist = np.empty(Q.shape[0])
    for i, members in enumerate(balls):
        members = np.sort(np.asarray(members, dtype=np.intp))
        if exclude_self:
            members = members[members != i]
        if members.size == 0:
            members = np.array([first[i]])
        d = block(Q[i:i + 1], R[members])[0]
        j = int(np.argmin(d))
        idx[i] = members[j]
        dist[i] = d[j]
    return idx, dist


def _as_rows(obj):
    if isinstance(obj, PointSet):
        return obj.coords, obj.metric
    return np.atleast_2d(np.asarray(obj, dtype=np.float64)), None


def nn_index(query, reference, metric: Optional[str] = None, exclude_self: bool = False):
    """Exact nearest reference row for each query row.

    Parameters
    ----------
    query, reference : PointSet or array-like of shape (n, d)
        Both must be of the same kind and dimensionality.
    metric : {"euclidean", "haversine"}, optional
        Inferred from PointSet inputs; defaults to euclidean for arrays.
    exclude_self : bool
        Skip reference row ``i`` when answering query row ``i`` (query and
        reference are then the same set).

    Returns
    -------
    index : ndarray of int
    distance : ndarray of float
    """
    Q, m1 = _as_rows(query)
    R, m2 = _as_rows(reference)
    if m1 is not None and m2 is not None and m1 != m2:
        raise ValueError("query and reference use different coordinate systems")
    metric = metric or m1 or m2 or "euclidean"
    if R.shape[0] == 0:
        raise ValueError("reference set is empty")
    if Q.shape[1] != R.shape[1]:
        raise ValueError(f"dimension mismatch: query has {Q.shape[1]} columns, reference {R.shape[1]}")
    if exclude_self and R.shape[0] < 2:
        raise ValueError("need at least two points to exclude self")
    if Q.shape[0] == 0:
        return np.empty(0, dtype=np.intp), np.empty(0)
    if R.shape[0] >= _KD_MIN_REFERENCE and Q.shape[0] >= _KD_MIN_QUERIES:
        return _nearest_kd(Q, R, metric, exclude_self)
    return _nearest_brute(Q, R, metric, exclude_self)


def nnd_within(A) -> np.ndarray:
    """Distance from each point of ``A`` to its nearest *other* point."""
    rows, _ = _as_rows(A)
    if rows.shape[0] < 2:
        raise ValueError("nnd_within needs at least two points")
    return nn_index(A, A, exclude_self=True)[1]


def nnd_between(A, B) -> np.ndarray:
    """Distance from each point of ``A`` to its nearest point in ``B``."""
    rows, _ = _as_rows(B)
    if rows.shape[0] < 1:
        raise ValueError("nnd_between needs a nonempty reference set")
    return nn_index(A, B)[1]


# ---------------------------------------------------------------------------
# ECDF and Wasserstein-1


@dataclass(frozen=True)
class ECDF:
    """Right-continuous empirical CDF of nonnegative distances."""

    sorted_values: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.sorted_values.shape[0])

    def __call__(self, r):
        return np.searchsorted(self.sorted_values, r, side="right") / self.n


def ecdf_of(values) -> ECDF:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("ECDF of an empty sample")
    if not np.all(np.isfinite(values)):
        raise ValueError("ECDF values must be finite")
    if np.any(values < 0):
        raise ValueError("ECDF values must be nonnegative distances")
    out = np.sort(values)
    out.setflags(write=False)
    return ECDF(out)


def wasserstein1(F: Union[ECDF, Sequence[float]], G: Union[ECDF, Sequence[float]]) -> float:
    """Area between two empirical CDFs, integrated exactly over the breakpoints."""
    F = F if isinstance(F, ECDF) else ecdf_of(F)
    G = G if isinstance(G, ECDF) else ecdf_of(G)
    grid = np.union1d(F.sorted_values, G.sorted_values)
    if grid.size < 2:
        return 0.0
    gaps = np.diff(grid)
    left = grid[:-1]
    return float(np.sum(np.abs(F(left) - G(left)) * gaps))
