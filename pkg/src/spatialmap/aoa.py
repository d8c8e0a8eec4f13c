"""Dissimilarity index, area of applicability and local point density."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import solve_triangular
from sklearn.base import BaseEstimator, TransformerMixin

from ._utils import check_matrix, derive_rng, type7_quantile
from .folds import check_folds, cv_distances, folds_from_dict
from .geom import _euclidean_block, nn_index
from .raster import RasterStack

logger = logging.getLogger(__name__)

EUCLIDEAN = "euclidean"
MAHALANOBIS = "mahalanobis"
MAX_EXACT_PAIRS_N = 20_000
SUBSAMPLE_PAIRS = 20_000_000
_CHUNK_ELEMENTS = 1 << 22


def whisker_threshold(values) -> float:
    """Upper boxplot whisker ``Q75 + 1.5 * IQR`` with type-7 quantiles."""
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise ValueError("no DI values to derive a threshold from")
    q25, q75 = type7_quantile(values, 0.25), type7_quantile(values, 0.75)
    return float(q75 + 1.5 * (q75 - q25))


def importance_weights(importance) -> np.ndarray:
    """Rescale importances to mean 1; all-zero importance gives uniform weights."""
    imp = np.maximum(np.asarray(importance, dtype=np.float64), 0.0)
    mean = imp.mean() if imp.size else 0.0
    if not np.isfinite(mean) or mean <= 0:
        return np.ones_like(imp)
    return imp / mean


def mean_pairwise_distance(Z: np.ndarray, seed: int = 0) -> float:
    """Mean distance over all unordered row pairs (seeded pair subsample above 20,000 rows)."""
    n = Z.shape[0]
    if n < 2:
        raise ValueError("need at least two training rows")
    if n > MAX_EXACT_PAIRS_N:
        rng = derive_rng(seed, "aoa", "d_bar")
        i = rng.integers(0, n, SUBSAMPLE_PAIRS)
        j = rng.integers(0, n - 1, SUBSAMPLE_PAIRS)
        j = np.where(j >= i, j + 1, j)
        diff = Z[i] - Z[j]
        return float(np.mean(np.sqrt(np.sum(diff * diff, axis=1))))
    total = 0.0
    step = max(1, _CHUNK_ELEMENTS // max(1, n * Z.shape[1]))
    for a in range(0, n, step):
        D = _euclidean_block(Z[a:a + step], Z)
        rows = np.arange(D.shape[0])[:, None] + a
        total += float(np.sum(np.where(np.arange(n)[None, :] > rows, D, 0.0)))
    return total / (n * (n - 1) / 2)


@dataclass
class TrainDI:
    """Frozen DI parameters derived from the training data and CV folds."""

    names: List[str]
    means: np.ndarray
    sds: np.ndarray
    weights: np.ndarray
    d_bar: float
    train_di: np.ndarray
    threshold: float
    metric: str
    train_rows: np.ndarray = field(repr=False)
    whitening: Optional[np.ndarray] = field(default=None, repr=False)
    folds: Optional[dict] = field(default=None, repr=False)

    def project(self, X) -> np.ndarray:
        """Standardize, weight and (for Mahalanobis) whiten raw predictor rows."""
        Z = (np.asarray(X, dtype=np.float64) - self.means) / self.sds * self.weights
        if self.whitening is not None:
            active = self.weights > 0
            Z = Z[:, active] @ self.whitening.T
        return Z

    def distances(self, X) -> np.ndarray:
        """Normalized distances (``/ d_bar``) from each row to every training row."""
        Z = self.project(X)
        return _euclidean_block(Z, self.train_rows) / self.d_bar

    def di(self, X) -> np.ndarray:
        X = check_matrix(X, "X")
        _, d = nn_index(self.project(X), self.train_rows)
        return d / self.d_bar

    def di_lpd(self, X):
        """DI and LPD computed from the same distance matrix."""
        X = check_matrix(X, "X")
        Z = self.project(X)
        di = np.empty(Z.shape[0])
        lpd = np.empty(Z.shape[0], dtype=np.int64)
        step = max(1, _CHUNK_ELEMENTS // max(1, self.train_rows.shape[0] * max(1, Z.shape[1])))
        for a in range(0, Z.shape[0], step):
            D = _euclidean_block(Z[a:a + step], self.train_rows) / self.d_bar
            di[a:a + step] = D.min(axis=1)
            lpd[a:a + step] = np.count_nonzero(D <= self.threshold, axis=1)
        return di, lpd

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "weights": self.weights.tolist(),
            "d_bar": self.d_bar,
            "train_di": [None if not np.isfinite(v) else float(v) for v in self.train_di],
            "threshold": self.threshold,
            "metric": self.metric,
            "train_rows": self.train_rows.tolist(),
            "whitening": None if self.whitening is None else self.whitening.tolist(),
            "folds": self.folds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainDI":
        arr = lambda v: np.asarray(v, dtype=np.float64)
        return cls(
            names=list(d["names"]), means=arr(d["means"]), sds=arr(d["sds"]), weights=arr(d["weights"]),
            d_bar=float(d["d_bar"]),
            train_di=np.array([np.nan if v is None else v for v in d["train_di"]], dtype=np.float64),
            threshold=float(d["threshold"]), metric=d["metric"], train_rows=arr(d["train_rows"]),
            whitening=None if d.get("whitening") is None else arr(d["whitening"]), folds=d.get("folds"))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "TrainDI":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def fold_object(self):
        return None if self.folds is None else folds_from_dict(self.folds)


def fit_train_di(X, names, folds, weights=None, metric: str = EUCLIDEAN, seed: int = 0) -> TrainDI:
    """Array-level core of :func:`train_di`."""
    X = check_matrix(X, "X", min_rows=2)
    check_folds(folds, X.shape[0])
    if metric not in (EUCLIDEAN, MAHALANOBIS):
        raise ValueError(f"metric must be 'euclidean' or 'mahalanobis', got {metric!r}")
    p = X.shape[1]
    weights = np.ones(p) if weights is None else np.asarray(weights, dtype=np.float64).copy()
    if weights.shape != (p,) or np.any(weights < 0):
        raise ValueError("weights must be nonnegative, one per predictor")
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    flat = ~(sds > 0)
    if flat.any():
        logger.warning("dropping zero-variance predictor(s) from DI: %s",
                       [names[j] for j in np.flatnonzero(flat)])
        sds = np.where(flat, 1.0, sds)
        weights[flat] = 0.0
    trained = TrainDI(list(names), means, sds, weights, 1.0, np.empty(0), 0.0, metric, np.empty((0, 0)))
    Z = (X - means) / sds * weights
    if metric == MAHALANOBIS:
        active = weights > 0
        cov = np.atleast_2d(np.cov(Z[:, active], rowvar=False))
        try:
            if np.linalg.cond(cov) > 1e12:
                raise np.linalg.LinAlgError
            L = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("predictor covariance is singular; use metric='euclidean'") from None
        trained.whitening = solve_triangular(L, np.eye(L.shape[0]), lower=True)
        Z = Z[:, active] @ trained.whitening.T
    d_bar = mean_pairwise_distance(Z, seed)
    if not d_bar > 0:
        raise ValueError("all training rows are identical in predictor space (mean distance 0)")
    trained.train_rows = Z
    trained.d_bar = d_bar
    trained.train_di = cv_distances(Z, folds) / d_bar
    trained.threshold = whisker_threshold(trained.train_di)
    trained.folds = folds.to_dict()
    return trained


def train_di(data, model=None, folds=None, metric: str = EUCLIDEAN, seed: int = 0) -> TrainDI:
    """DI parameters for ``data`` restricted to the model's predictors.

    Weights are the model's importances rescaled to mean 1 (uniform without a
    model); each training row's DI is its distance to the nearest row outside
    its CV fold, divided by the mean pairwise training distance.
    """
    if folds is None:
        raise ValueError("train_di needs the cross-validation folds")
    if model is not None:
        names = [str(n) for n in model.feature_names_in_]
        weights = importance_weights(getattr(model, "feature_importances_", np.ones(len(names))))
    else:
        names, weights = list(data.names), None
    return fit_train_di(data.columns(names), names, folds, weights, metric, seed)


def update_threshold(trained: TrainDI, new_train_di) -> TrainDI:
    values = np.asarray(new_train_di, dtype=np.float64)
    if values.size == 0:
        raise ValueError("no DI values supplied")
    return dataclasses.replace(trained, threshold=whisker_threshold(values))


@dataclass
class AOAResult:
    DI: RasterStack
    AOA: RasterStack
    LPD: Optional[RasterStack]
    trained: TrainDI

    def stack(self) -> RasterStack:
        bands = {"DI": self.DI.band("DI"), "AOA": self.AOA.band("AOA")}
        if self.LPD is not None:
            bands["LPD"] = self.LPD.band("LPD")
        return self.DI.like(bands)


def aoa(grid: RasterStack, trained: TrainDI, compute_lpd: bool = False) -> AOAResult:
    """DI, AOA mask (1 inside, 0 outside) and optionally LPD for every cell."""
    missing = [n for n in trained.names if n not in grid.bands]
    if missing:
        raise KeyError(f"raster is missing band(s): {missing}")
    X, valid = grid.to_rows(trained.names)
    if compute_lpd:
        di, lpd = trained.di_lpd(X[valid]) if valid.any() else (np.empty(0), np.empty(0))
    else:
        di = trained.di(X[valid]) if valid.any() else np.empty(0)
        lpd = None
    inside = (di <= trained.threshold).astype(np.float64)
    return AOAResult(
        DI=grid.from_rows(di, valid, "DI"),
        AOA=grid.from_rows(inside, valid, "AOA"),
        LPD=None if lpd is None else grid.from_rows(lpd.astype(np.float64), valid, "LPD"),
        trained=trained,
    )


def mask_by_aoa(value_grid: RasterStack, aoa_grid: RasterStack) -> RasterStack:
    """Set cells outside the AOA (or without AOA data) to nodata."""
    if not value_grid.same_grid(aoa_grid):
        raise ValueError("value grid and AOA grid are not aligned")
    inside = aoa_grid.band("AOA") if "AOA" in aoa_grid.bands else next(iter(aoa_grid.bands.values()))
    keep = np.isfinite(inside) & (inside != 0)
    return value_grid.like({name: np.where(keep, v, np.nan) for name, v in value_grid.bands.items()})


class AreaOfApplicability(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit`` learns the DI parameters, ``transform`` returns DI.

    ``predict`` returns 1 inside the area of applicability and 0 outside.
    """

    def __init__(self, metric=EUCLIDEAN, seed=0):
        self.metric = metric
        self.seed = seed

    def fit(self, X, y=None, folds=None, weights=None, feature_names=None):
        if folds is None:
            raise ValueError("AreaOfApplicability.fit needs folds")
        if hasattr(X, "columns"):
            feature_names = [str(c) for c in X.columns]
            X = X.to_numpy(dtype=np.float64)
        X = check_matrix(X, "X", min_rows=2)
        names = feature_names or [f"x{j}" for j in range(X.shape[1])]
        self.trained_ = fit_train_di(X, names, folds, weights, self.metric, self.seed)
        self.threshold_ = self.trained_.threshold
        return self

    def transform(self, X):
        return self.trained_.di(np.asarray(X, dtype=np.float64))

    def predict(self, X):
        return (self.transform(X) <= self.trained_.threshold).astype(int)

    def local_point_density(self, X):
        return self.trained_.di_lpd(np.asarray(X, dtype=np.float64))[1]
