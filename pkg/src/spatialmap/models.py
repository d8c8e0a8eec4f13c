"""Regression models, cross-validation with supplied folds, tuning and raster prediction."""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, clone

from . import _cart
from ._utils import check_matrix, check_names, check_vector, parallel_map, split_frame
from .folds import check_folds
from .geom import PointSet, pairwise_distances
from .raster import RasterStack

logger = logging.getLogger(__name__)

MODEL_FORMAT = "spatialmap-model"
MODEL_VERSION = 1


@dataclass
class Dataset:
    """Training table: predictors, response, names and optional locations."""

    X: np.ndarray
    y: np.ndarray
    names: List[str]
    points: Optional[PointSet] = None

    def __post_init__(self):
        self.X = check_matrix(self.X, "X", min_rows=2)
        self.y = check_vector(self.y, "y", self.X.shape[0])
        self.names = check_names(self.names, self.X.shape[1])
        if self.X.shape[1] < 1:
            raise ValueError("need at least one predictor")
        if self.points is not None and len(self.points) != self.X.shape[0]:
            raise ValueError("points and predictor rows differ in length")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def columns(self, names: Sequence[str]) -> np.ndarray:
        missing = [n for n in names if n not in self.names]
        if missing:
            raise KeyError(f"dataset has no predictor(s) {missing}")
        return self.X[:, [self.names.index(n) for n in names]]

    def select(self, names: Sequence[str]) -> "Dataset":
        return Dataset(self.columns(names), self.y, list(names), self.points)

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        pts = None if self.points is None else self.points.subset(idx)
        return Dataset(self.X[idx], self.y[idx], self.names, pts)


class _NamedFeatures:
    """Name-based column alignment at prediction time."""

    def _set_names(self, X, feature_names):
        X, names = split_frame(X, feature_names)
        X = check_matrix(X, "X", min_rows=2)
        if names is None:
            names = [f"x{j}" for j in range(X.shape[1])]
        self.feature_names_in_ = np.array(check_names(names, X.shape[1]), dtype=object)
        self.n_features_in_ = X.shape[1]
        return X

    def _align(self, X, feature_names=None):
        X, names = split_frame(X, feature_names)
        X = check_matrix(X, "X", allow_nan=True)
        if names is None:
            if X.shape[1] != self.n_features_in_:
                raise ValueError(f"X has {X.shape[1]} columns, model expects {self.n_features_in_}")
            return X
        missing = [n for n in self.feature_names_in_ if n not in names]
        if missing:
            raise ValueError(f"missing predictor(s) for prediction: {missing}")
        return X[:, [names.index(n) for n in self.feature_names_in_]]


class RandomForest(_NamedFeatures, RegressorMixin, BaseEstimator):
    """Bagged CART regression forest with out-of-bag permutation importance.

    Each tree draws an ``n``-row bootstrap, considers ``mtry`` random
    predictors per node and splits at midpoints between consecutive values.
    Tree ``t`` uses its own random stream spawned from ``seed``, so results
    do not depend on ``threads``.

    Parameters
    ----------
    num_trees : int
    mtry : int or None
        Predictors tried per split; ``None`` means ``floor(sqrt(p))``.
    min_node_size : int
        Nodes with at most this many rows are not split.
    seed : int
    importance : {"permutation", None}
        OOB permutation importance (increase in OOB MSE, floored at 0).
    threads : int
    """

    def __init__(self, num_trees=100, mtry=None, min_node_size=5, seed=0,
                 importance="permutation", threads=1):
        self.num_trees = num_trees
        self.mtry = mtry
        self.min_node_size = min_node_size
        self.seed = seed
        self.importance = importance
        self.threads = threads

    def _resolve_mtry(self, p):
        mtry = max(1, int(math.floor(math.sqrt(p)))) if self.mtry is None else int(self.mtry)
        if not 1 <= mtry <= p:
            raise ValueError(f"mtry must lie in [1, {p}], got {mtry}")
        return mtry

    def fit(self, X, y, feature_names=None):
        X = self._set_names(X, feature_names)
        y = check_vector(y, "y", X.shape[0])
        if self.num_trees < 1:
            raise ValueError("num_trees must be >= 1")
        n, p = X.shape
        mtry = self._resolve_mtry(p)
        self.mtry_ = mtry
        streams = np.random.SeedSequence(int(self.seed), spawn_key=(zlib.crc32(b"rf"),)).spawn(self.num_trees)
        want_importance = self.importance == "permutation"

        def fit_one(ss):
            rng = np.random.default_rng(ss)
            rows = rng.integers(0, n, n).astype(np.int64)
            keys = rng.random((2 * n + 1, p))
            tree = _cart.grow_tree(X, y, rows, mtry, int(self.min_node_size), keys)
            if not want_importance:
                return tree, None
            oob = np.flatnonzero(np.bincount(rows, minlength=n) == 0)
            if oob.size == 0:
                return tree, None
            Xo = X[oob]
            base = np.mean((y[oob] - _cart.predict_tree(Xo, *tree)) ** 2)
            inc = np.empty(p)
            for j in range(p):
                Xp = Xo.copy()
                Xp[:, j] = Xp[rng.permutation(oob.size), j]
                inc[j] = np.mean((y[oob] - _cart.predict_tree(Xp, *tree)) ** 2) - base
            return tree, inc

        results = parallel_map(fit_one, streams, self.threads)
        self._pack([r[0] for r in results])
        incs = [r[1] for r in results if r[1] is not None]
        if want_importance and incs:
            self.feature_importances_ = np.maximum(np.mean(incs, axis=0), 0.0)
        else:
            self.feature_importances_ = np.zeros(p) if want_importance else np.ones(p)
        return self

    def _pack(self, trees):
        sizes = [t[0].shape[0] for t in trees]
        self.offsets_ = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        parts = list(zip(*trees))
        self.left_, self.right_, self.feature_ = (np.concatenate(parts[i]).astype(np.int64) for i in range(3))
        self.threshold_ = np.concatenate(parts[3]).astype(np.float64)
        self.value_ = np.concatenate(parts[4]).astype(np.float64)

    def predict(self, X, feature_names=None):
        X = np.ascontiguousarray(self._align(X, feature_names))
        out = np.full(X.shape[0], np.nan)
        ok = np.all(np.isfinite(X), axis=1)
        if ok.any():
            out[ok] = _cart.predict_forest(np.ascontiguousarray(X[ok]), self.offsets_, self.left_, self.right_,
                                           self.feature_, self.threshold_, self.value_)
        return out

    @property
    def n_trees_(self):
        return self.offsets_.shape[0] - 1

    def _state(self):
        return {
            "mtry_": self.mtry_,
            "offsets": self.offsets_.tolist(),
            "left": self.left_.tolist(),
            "right": self.right_.tolist(),
            "feature": self.feature_.tolist(),
            "threshold": self.threshold_.tolist(),
            "value": self.value_.tolist(),
        }

    def _load_state(self, state):
        self.mtry_ = state["mtry_"]
        self.offsets_ = np.asarray(state["offsets"], dtype=np.int64)
        for key in ("left", "right", "feature"):
            setattr(self, key + "_", np.asarray(state[key], dtype=np.int64))
        self.threshold_ = np.asarray(state["threshold"], dtype=np.float64)
        self.value_ = np.asarray(state["value"], dtype=np.float64)


class KNNRegressor(_NamedFeatures, RegressorMixin, BaseEstimator):
    """Mean response of the ``k_neighbors`` nearest (standardized) training rows.

    Ties in distance go to the lower training row index.
    """

    def __init__(self, k_neighbors=5, standardize=True):
        self.k_neighbors = k_neighbors
        self.standardize = standardize

    def fit(self, X, y, feature_names=None):
        X = self._set_names(X, feature_names)
        y = check_vector(y, "y", X.shape[0])
        if not 1 <= self.k_neighbors <= X.shape[0]:
            raise ValueError(f"k_neighbors must lie in [1, {X.shape[0]}]")
        if self.standardize:
            self.mean_ = X.mean(axis=0)
            sd = X.std(axis=0, ddof=1)
            self.scale_ = np.where(sd > 0, sd, 1.0)
        else:
            self.mean_ = np.zeros(X.shape[1])
            self.scale_ = np.ones(X.shape[1])
        self.X_ = (X - self.mean_) / self.scale_
        self.y_ = y
        self.feature_importances_ = np.ones(X.shape[1])
        return self

    def predict(self, X, feature_names=None):
        X = self._align(X, feature_names)
        out = np.full(X.shape[0], np.nan)
        ok = np.all(np.isfinite(X), axis=1)
        if ok.any():
            D = pairwise_distances((X[ok] - self.mean_) / self.scale_, self.X_)
            nearest = np.argsort(D, axis=1, kind="stable")[:, : self.k_neighbors]
            out[ok] = self.y_[nearest].mean(axis=1)
        return out

    def _state(self):
        return {"mean": self.mean_.tolist(), "scale": self.scale_.tolist(),
                "X": self.X_.tolist(), "y": self.y_.tolist()}

    def _load_state(self, state):
        self.mean_ = np.asarray(state["mean"])
        self.scale_ = np.asarray(state["scale"])
        self.X_ = np.asarray(state["X"])
        self.y_ = np.asarray(state["y"])


MODEL_KINDS = {"rf": RandomForest, "knn": KNNRegressor}


def model_kind(model) -> str:
    for kind, cls in MODEL_KINDS.items():
        if isinstance(model, cls):
            return kind
    raise TypeError(f"unsupported model type {type(model).__name__}")


def save_model(model, path) -> None:
    """Self-describing JSON dump (kind, params, predictor names, trees).

    ``threads`` is a runtime setting, not part of the model, and is not stored.
    """
    params = {k: v for k, v in model.get_params().items() if k != "threads"}
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model_kind(model),
        "params": params,
        "feature_names": [str(n) for n in model.feature_names_in_],
        "importance": model.feature_importances_.tolist(),
        "state": model._state(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"{path} is not a saved model")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    model = MODEL_KINDS[doc["kind"]](**doc["params"])
    model.feature_names_in_ = np.array(doc["feature_names"], dtype=object)
    model.n_features_in_ = len(doc["feature_names"])
    model.feature_importances_ = np.asarray(doc["importance"], dtype=np.float64)
    model._load_state(doc["state"])
    return model


# ---------------------------------------------------------------------------
# validation


def global_validation(observed, predicted=None) -> Dict[str, Optional[float]]:
    """Metrics on pooled held-out predictions.

    R2 is the squared Pearson correlation of observed and predicted values
    (``None`` when either is constant); ``R2_sse`` is ``1 - SSE/SST``.
    """
    if predicted is None:
        observed, predicted = observed.observed, observed.predicted
    obs = np.asarray(observed, dtype=np.float64)
    pred = np.asarray(predicted, dtype=np.float64)
    if obs.size == 0:
        raise ValueError("no pooled predictions")
    resid = obs - pred
    out = {
        "RMSE": float(np.sqrt(np.mean(resid ** 2))),
        "MAE": float(np.mean(np.abs(resid))),
        "R2": None,
        "R2_sse": None,
        "n": int(obs.size),
    }
    so, sp = obs - obs.mean(), pred - pred.mean()
    sso, ssp = float(np.sum(so * so)), float(np.sum(sp * sp))
    if sso > 0 and ssp > 0:
        out["R2"] = float(np.sum(so * sp) ** 2 / (sso * ssp))
    if sso > 0:
        out["R2_sse"] = float(1.0 - np.sum(resid ** 2) / sso)
    return out


@dataclass
class CVResult:
    """Pooled held-out predictions, one entry per held-out row."""

    row: np.ndarray
    fold: np.ndarray
    observed: np.ndarray
    predicted: np.ndarray
    metrics: Dict[str, Optional[float]] = field(default_factory=dict)

    @property
    def residuals(self):
        return self.observed - self.predicted

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["row", "fold", "observed", "predicted"])
            for r, f, o, p in zip(self.row, self.fold, self.observed, self.predicted):
                w.writerow([int(r), int(f), repr(float(o)), repr(float(p))])

    @classmethod
    def read_csv(cls, path) -> "CVResult":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        res = cls(np.array([int(r["row"]) for r in rows]), np.array([int(r["fold"]) for r in rows]),
                  np.array([float(r["observed"]) for r in rows]), np.array([float(r["predicted"]) for r in rows]))
        res.metrics = global_validation(res)
        return res

    @classmethod
    def concat(cls, parts: Sequence["CVResult"]) -> "CVResult":
        res = cls(*(np.concatenate([getattr(p, a) for p in parts]) for a in ("row", "fold", "observed", "predicted")))
        res.metrics = global_validation(res)
        return res


def _cv_clone(model):
    m = clone(model)
    if "importance" in m.get_params():
        m.set_params(importance=None)
    return m


def cross_validate(data: Dataset, model, folds, threads: int = 1) -> CVResult:
    """Fit on each training side, predict the held-out rows and pool."""
    check_folds(folds, data.n)
    splits = list(folds.split())

    def run(split):
        f, (train, test) = split
        if len(train) == 0:
            raise ValueError(f"fold {f} has an empty training side")
        m = _cv_clone(model).fit(data.X[train], data.y[train], feature_names=data.names)
        return f, test, m.predict(data.X[test])

    parts = parallel_map(run, list(enumerate(splits)), threads)
    rows = np.concatenate([p[1] for p in parts]).astype(np.intp)
    fold = np.concatenate([np.full(len(p[1]), p[0]) for p in parts]).astype(np.intp)
    pred = np.concatenate([p[2] for p in parts])
    order = np.argsort(rows, kind="stable")
    res = CVResult(rows[order], fold[order], data.y[rows[order]], pred[order])
    res.metrics = global_validation(res)
    return res


def default_grid(p: int) -> List[dict]:
    """``mtry`` in {floor(sqrt p), floor(p/2), p}, deduplicated, order kept."""
    values = []
    for v in (int(math.floor(math.sqrt(p))), p // 2, p):
        v = max(1, v)
        if v not in values:
            values.append(v)
    return [{"mtry": v} for v in values]


@dataclass
class TuneResult:
    best_params: dict
    table: List[dict]
    results: List[CVResult]
    model: object

    @property
    def best_cv(self) -> CVResult:
        return self.results[self.table_index]

    @property
    def table_index(self) -> int:
        return next(i for i, row in enumerate(self.table) if row["best"])


def tune(data: Dataset, folds, grid: Sequence[dict], model=None, threads: int = 1) -> TuneResult:
    """Pick the grid entry with the lowest pooled RMSE (first wins ties) and refit on all rows."""
    if not grid:
        raise ValueError("empty tuning grid")
    model = RandomForest() if model is None else model
    results, table = [], []
    for params in grid:
        res = cross_validate(data, clone(model).set_params(**params), folds, threads)
        results.append(res)
        table.append({"params": dict(params), **res.metrics, "best": False})
    best = 0
    for i, res in enumerate(results):
        if res.metrics["RMSE"] < results[best].metrics["RMSE"]:
            best = i
    table[best]["best"] = True
    final = clone(model).set_params(**grid[best]).fit(data.X, data.y, feature_names=data.names)
    return TuneResult(dict(grid[best]), table, results, final)


def predict_raster(model, grid: RasterStack, name: str = "prediction") -> RasterStack:
    """Predict every cell with data in all model bands; other cells stay nodata."""
    names = [str(n) for n in model.feature_names_in_]
    missing = [n for n in names if n not in grid.bands]
    if missing:
        raise KeyError(f"raster is missing band(s) required by the model: {missing}")
    X, valid = grid.to_rows(names)
    values = model.predict(X[valid]) if valid.any() else np.empty(0)
    return grid.from_rows(values, valid, name)
