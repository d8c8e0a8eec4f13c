"""Cross-validation fold construction.

``FoldAssignment`` and ``NNDMExclusion`` both expose ``split``/``get_n_splits``
so they can be passed as ``cv=`` to scikit-learn utilities.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform

from ._utils import derive_rng, parallel_map
from .geom import PointSet, ecdf_of, nn_index, nnd_between, pairwise_distances, wasserstein1

logger = logging.getLogger(__name__)


@dataclass
class FoldAssignment:
    """Rows held out per fold and the rows trained on when it is held out.

    ``fold_of[i] == -1`` marks a row that is never held out (only happens for
    combined space-time blocking, where off-block rows serve as training data
    only).
    """

    fold_of: np.ndarray
    index_train: List[np.ndarray]
    method: str = "custom"
    seed: Optional[int] = None
    W: Optional[float] = None
    info: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.fold_of = np.asarray(self.fold_of, dtype=np.intp)
        self.index_train = [np.asarray(t, dtype=np.intp) for t in self.index_train]
        n, k = self.n, self.k
        if np.any(self.fold_of < -1) or np.any(self.fold_of >= k):
            raise ValueError("fold ids must lie in [0, k)")
        for f, train in enumerate(self.index_train):
            if train.size and (train.min() < 0 or train.max() >= n):
                raise ValueError(f"fold {f}: training index out of range")
            held = self.test_indices(f)
            if held.size == 0:
                raise ValueError(f"fold {f} holds out no rows")
            if np.intersect1d(held, train).size:
                raise ValueError(f"fold {f}: held-out rows also appear on the training side")

    @property
    def n(self) -> int:
        return int(self.fold_of.shape[0])

    @property
    def k(self) -> int:
        return len(self.index_train)

    def test_indices(self, f: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == f)

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.k

    def split(self, X=None, y=None, groups=None):
        for f in range(self.k):
            yield self.index_train[f], self.test_indices(f)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "seed": self.seed,
            "W": self.W,
            "fold_of": self.fold_of.tolist(),
            "index_train": [t.tolist() for t in self.index_train],
        }


@dataclass
class NNDMExclusion:
    """Leave-one-out iterations with per-iteration exclusion sets."""

    exclude: List[np.ndarray]
    W: Optional[float] = None
    W_loo: Optional[float] = None
    method: str = "nndm"

    def __post_init__(self):
        self.exclude = [np.unique(np.asarray(e, dtype=np.intp)) for e in self.exclude]
        n = self.n
        for i, e in enumerate(self.exclude):
            if i not in e:
                raise ValueError(f"iteration {i}: exclusion set must contain the test point")
            if e.min() < 0 or e.max() >= n:
                raise ValueError(f"iteration {i}: exclusion index out of range")
            if e.size >= n:
                raise ValueError(f"iteration {i}: no training points left")

    @property
    def n(self) -> int:
        return len(self.exclude)

    @property
    def k(self) -> int:
        return self.n

    def training_side(self, i: int) -> np.ndarray:
        return np.setdiff1d(np.arange(self.n), self.exclude[i], assume_unique=True)

    def test_indices(self, i: int) -> np.ndarray:
        return np.array([i], dtype=np.intp)

    def get_n_splits(self, X=None, y=None, groups=None) -> int:
        return self.n

    def split(self, X=None, y=None, groups=None):
        for i in range(self.n):
            yield self.training_side(i), self.test_indices(i)

    def to_dict(self) -> dict:
        return {"method": self.method, "W": self.W, "exclude": [e.tolist() for e in self.exclude]}


def folds_from_dict(d: dict):
    if "exclude" in d:
        return NNDMExclusion([np.asarray(e) for e in d["exclude"]], W=d.get("W"))
    return FoldAssignment(np.asarray(d["fold_of"]), [np.asarray(t) for t in d["index_train"]],
                          method=d.get("method", "custom"), seed=d.get("seed"), W=d.get("W"))


def save_folds(folds, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(folds.to_dict(), fh)
        fh.write("\n")


def load_folds(path):
    with open(path, encoding="utf-8") as fh:
        return folds_from_dict(json.load(fh))


def check_folds(folds, n: int) -> None:
    if folds.n != n:
        raise ValueError(f"folds describe {folds.n} rows but the data has {n}")


# ---------------------------------------------------------------------------
# distances seen during cross-validation


def cv_distances(locations, folds) -> np.ndarray:
    """Distance from every held-out row to its nearest row on the training side.

    ``locations`` is a PointSet (geographic space) or a row matrix (feature
    space). Rows never held out get NaN.
    """
    out = np.full(folds.n, np.nan)
    if isinstance(folds, NNDMExclusion):
        for i in range(folds.n):
            train = folds.training_side(i)
            out[i] = nn_index(_take(locations, [i]), _take(locations, train))[1][0]
        return out
    for f in range(folds.k):
        held = folds.test_indices(f)
        train = folds.index_train[f]
        if train.size == 0:
            raise ValueError(f"fold {f} has an empty training side")
        out[held] = nn_index(_take(locations, held), _take(locations, train))[1]
    return out


def _take(locations, rows):
    if isinstance(locations, PointSet):
        return locations.subset(rows)
    return np.asarray(locations)[np.asarray(rows, dtype=np.intp)]


def _complement_folds(fold_of: np.ndarray, k: int) -> List[np.ndarray]:
    return [np.flatnonzero(fold_of != f) for f in range(k)]


# ---------------------------------------------------------------------------
# random and blocked folds


def random_kfold(n: int, k: int, seed: int = 0) -> FoldAssignment:
    """Shuffle rows and deal them round-robin into ``k`` folds."""
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    perm = derive_rng(seed, "folds", "random").permutation(n)
    fold_of = np.empty(n, dtype=np.intp)
    fold_of[perm] = np.arange(n) % k
    return FoldAssignment(fold_of, _complement_folds(fold_of, k), method="random", seed=seed)


def _label_blocks(labels, k, rng, what):
    uniq, inverse = np.unique(np.asarray(labels), return_inverse=True)
    if uniq.size < k:
        raise ValueError(f"{what} has {uniq.size} distinct groups, fewer than k={k}")
    block_of_label = np.empty(uniq.size, dtype=np.intp)
    block_of_label[rng.permutation(uniq.size)] = np.arange(uniq.size) % k
    return block_of_label[inverse.ravel()]


def spacetime_folds(spacevar=None, timevar=None, k: int = 10, seed: int = 0) -> FoldAssignment:
    """Folds that keep whole space and/or time groups together.

    With both variables, fold ``f`` holds out rows whose space group and time
    group both fall in block ``f``, and trains on rows that share neither a
    space block nor a time block with them.
    """
    if spacevar is None and timevar is None:
        raise ValueError("provide spacevar, timevar or both")
    rng = derive_rng(seed, "folds", "spacetime")
    sb = _label_blocks(spacevar, k, rng, "spacevar") if spacevar is not None else None
    tb = _label_blocks(timevar, k, rng, "timevar") if timevar is not None else None
    if sb is not None and tb is not None:
        if sb.shape != tb.shape:
            raise ValueError("spacevar and timevar differ in length")
        fold_of = np.where(sb == tb, sb, -1)
        for f in range(k):
            if not np.any(fold_of == f):
                raise ValueError(f"no rows fall in space block {f} and time block {f}; use fewer folds")
        index_train = [np.flatnonzero((sb != f) & (tb != f)) for f in range(k)]
        return FoldAssignment(fold_of, index_train, method="spacetime", seed=seed)
    fold_of = sb if sb is not None else tb
    return FoldAssignment(fold_of, _complement_folds(fold_of, k), method="spacetime", seed=seed)


# ---------------------------------------------------------------------------
# nearest neighbour distance matching


def nndm(tpoints, predpoints, min_train_fraction: float = 0.5) -> NNDMExclusion:
    """Leave-one-out exclusion sets matching CV distances to prediction distances.

    Radii are swept upward over the current CV distances. At each radius
    ``r``, while the CV distance ECDF exceeds the prediction ECDF, the
    iteration with the smallest CV distance not above ``r`` loses its current
    nearest neighbour. An iteration stops losing neighbours once its training
    side would fall below ``min_train_fraction * n``. The returned sets are
    the state along this sweep with the lowest Wasserstein distance to the
    prediction ECDF, so the result is never worse than plain LOO.
    """
    coords = tpoints.coords if isinstance(tpoints, PointSet) else np.asarray(tpoints, dtype=np.float64)
    metric = tpoints.metric if isinstance(tpoints, PointSet) else "euclidean"
    n = coords.shape[0]
    if n < 2:
        raise ValueError("nndm needs at least two training points")
    if len(predpoints) < 1:
        raise ValueError("nndm needs at least one prediction point")
    D = pairwise_distances(coords, coords, metric)
    if not np.any(D > 0):
        raise ValueError("all training points are identical")
    gpred = ecdf_of(nnd_between(predpoints, tpoints))
    m = gpred.n

    np.fill_diagonal(D, np.inf)
    order = np.argsort(D, axis=1, kind="stable")[:, : n - 1]
    ptr = np.zeros(n, dtype=np.intp)
    rows = np.arange(n)
    cv = D[rows, order[rows, ptr]]
    min_train = min_train_fraction * n

    def can_exclude(i):
        # training side after one more exclusion: n - 1 - (ptr + 1)
        return ptr[i] + 1 <= n - 2 and n - 2 - ptr[i] >= min_train

    best_w = wasserstein1(ecdf_of(cv), gpred)
    w_loo = best_w
    best_ptr = ptr.copy()
    frozen = np.zeros(n, dtype=bool)

    r = cv.min()
    while True:
        while True:
            count = int(np.count_nonzero(cv <= r))
            pred_count = int(np.searchsorted(gpred.sorted_values, r, side="right"))
            if count * m <= pred_count * n:
                break
            eligible = (cv <= r) & ~frozen
            if not eligible.any():
                break
            cand = np.flatnonzero(eligible)
            i = int(cand[np.argmin(cv[cand])])
            if not can_exclude(i):
                frozen[i] = True
                continue
            ptr[i] += 1
            cv[i] = D[i, order[i, ptr[i]]]
            w = wasserstein1(ecdf_of(cv), gpred)
            if w < best_w:
                best_w = w
                best_ptr = ptr.copy()
        larger = cv[cv > r]
        if larger.size == 0:
            break
        r = larger.min()

    exclude = [np.concatenate(([i], order[i, : best_ptr[i]])) for i in range(n)]
    return NNDMExclusion(exclude, W=best_w, W_loo=w_loo)


# ---------------------------------------------------------------------------
# k-fold NNDM


def merge_clusters(labels: np.ndarray, k: int) -> np.ndarray:
    """Greedy size-balanced merge: largest cluster goes to the smallest fold."""
    uniq, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    order = sorted(range(uniq.size), key=lambda c: (-counts[c], c))
    sizes = np.zeros(k, dtype=np.int64)
    fold_of_cluster = np.empty(uniq.size, dtype=np.intp)
    for c in order:
        f = int(np.argmin(sizes))
        fold_of_cluster[c] = f
        sizes[f] += counts[c]
    return fold_of_cluster[inverse.ravel()]


def _fold_cv_distances(D: np.ndarray, fold_of: np.ndarray, k: int) -> np.ndarray:
    out = np.empty(fold_of.shape[0])
    for f in range(k):
        held = fold_of == f
        out[held] = D[np.ix_(held, ~held)].min(axis=1)
    return out


def knndm(tpoints, domain_sample, k: int = 10, seed: int = 0, max_ratio: int = 10,
          threads: int = 1) -> FoldAssignment:
    """k-fold assignment whose CV distances best match prediction distances.

    Candidates are a random k-fold split followed by complete-linkage
    clusterings of the training locations cut at ``q = k .. min(n, max_ratio*k)``
    groups, each merged into ``k`` folds. The candidate with the smallest
    Wasserstein distance to the prediction-to-sample NND ECDF wins; ties go to
    the earlier candidate.
    """
    coords = tpoints.coords if isinstance(tpoints, PointSet) else np.asarray(tpoints, dtype=np.float64)
    metric = tpoints.metric if isinstance(tpoints, PointSet) else "euclidean"
    n = coords.shape[0]
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    if len(domain_sample) < 1:
        raise ValueError("knndm needs a nonempty prediction domain sample")
    gpred = ecdf_of(nnd_between(domain_sample, tpoints))
    D = pairwise_distances(coords, coords, metric)
    np.fill_diagonal(D, 0.0)

    qs = list(range(k, min(n, max_ratio * k) + 1))
    Z = linkage(squareform(D, checks=False), method="complete")
    cuts = cut_tree(Z, n_clusters=qs)
    candidates = [("random", None, random_kfold(n, k, seed).fold_of)]
    candidates += [("cluster", q, merge_clusters(cuts[:, j], k)) for j, q in enumerate(qs)]

    def score(candidate):
        return wasserstein1(ecdf_of(_fold_cv_distances(D, candidate[2], k)), gpred)

    scores = parallel_map(score, candidates, threads)
    best = 0
    for j, w in enumerate(scores):
        if w < scores[best]:
            best = j
    kind, q, fold_of = candidates[best]
    return FoldAssignment(fold_of, _complement_folds(fold_of, k), method="knndm", seed=seed,
                          W=float(scores[best]),
                          info={"candidate": kind, "q": q, "W_random": float(scores[0])})
