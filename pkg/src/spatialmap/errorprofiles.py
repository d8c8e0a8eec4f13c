"""Monotone error profiles over DI/LPD and predictor-space multi-CV calibration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.cluster import KMeans

from ._utils import derive_seed, parallel_map
from .aoa import TrainDI, mask_by_aoa
from .folds import FoldAssignment, cv_distances
from .models import CVResult, Dataset, cross_validate
from .raster import RasterStack
from .svg import Plot

logger = logging.getLogger(__name__)

DI_KIND = "DI"
LPD_KIND = "LPD"
MIN_WINDOW = 2
KMEANS_RESTARTS = 25


def isotonic_regression(y, weights=None, increasing: bool = True) -> np.ndarray:
    """Least-squares monotone fit by pool-adjacent-violators."""
    y = np.asarray(y, dtype=np.float64)
    if not increasing:
        return -isotonic_regression(-y, weights, True)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    if y.size <= 1:
        return y.copy()
    # each block: weighted mean, total weight, length
    means, wsum, length = [], [], []
    for v, wt in zip(y, w):
        means.append(v)
        wsum.append(wt)
        length.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, l2 = means.pop(), wsum.pop(), length.pop()
            total = wsum[-1] + w2
            means[-1] = (means[-1] * wsum[-1] + m2 * w2) / total
            wsum[-1] = total
            length[-1] += l2
    return np.repeat(means, length)


def moving_window_rmse(values, residuals, window: int):
    """Sort by ``values`` and slide a ``window``-row window with stride 1.

    Returns arrays ``(mean value, window RMSE)`` for every window position.
    """
    values = np.asarray(values, dtype=np.float64)
    residuals = np.asarray(residuals, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    v, r2 = values[order], residuals[order] ** 2
    cv = np.concatenate([[0.0], np.cumsum(v)])
    cr = np.concatenate([[0.0], np.cumsum(r2)])
    centers = (cv[window:] - cv[:-window]) / window
    rmse = np.sqrt(np.maximum(cr[window:] - cr[:-window], 0.0) / window)
    return centers, rmse


class ErrorProfile(RegressorMixin, BaseEstimator):
    """Expected CV error as a monotone piecewise-linear function of DI or LPD.

    ``fit(values, residuals)`` computes moving-window RMSE over rows sorted by
    value, fits it isotonically (nondecreasing for DI, nonincreasing for LPD)
    and interpolates linearly between window centres. ``predict`` clamps to
    the boundary values outside the calibration range.
    """

    def __init__(self, window=None, kind=DI_KIND):
        self.window = window
        self.kind = kind

    def fit(self, values, residuals):
        values = np.asarray(values, dtype=np.float64).ravel()
        residuals = np.asarray(residuals, dtype=np.float64).ravel()
        if values.shape != residuals.shape:
            raise ValueError("values and residuals differ in length")
        ok = np.isfinite(values) & np.isfinite(residuals)
        values, residuals = values[ok], residuals[ok]
        if self.kind not in (DI_KIND, LPD_KIND):
            raise ValueError("kind must be 'DI' or 'LPD'")
        n = values.size
        window = max(10, n // 20) if self.window is None else int(self.window)
        if window < MIN_WINDOW:
            raise ValueError(f"window must be at least {MIN_WINDOW}")
        if n < 2 * window:
            raise ValueError(f"{n} calibration rows are fewer than 2*window={2 * window}; use a smaller window")
        centers, rmse = moving_window_rmse(values, residuals, window)
        fitted = isotonic_regression(rmse, increasing=self.kind == DI_KIND)
        xs, inverse = np.unique(centers, return_inverse=True)
        ys = np.bincount(inverse, weights=fitted) / np.bincount(inverse)
        # averaging tied centres can break monotonicity by an ulp; restore it exactly
        ys = np.maximum.accumulate(ys) if self.kind == DI_KIND else np.minimum.accumulate(ys)
        self.window_ = window
        self.window_stats_ = np.column_stack([centers, rmse, np.full(centers.size, window)])
        self.breakpoints_ = xs
        self.fitted_ = ys
        self.valid_range_ = (float(values.min()), float(values.max()))
        return self

    def predict(self, values):
        values = np.asarray(values, dtype=np.float64)
        out = np.full(values.shape, np.nan)
        ok = np.isfinite(values)
        out[ok] = np.interp(values[ok], self.breakpoints_, self.fitted_)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "window": self.window_,
            "valid_range": list(self.valid_range_),
            "window_stats": [[float(c), float(r), int(s)] for c, r, s in self.window_stats_],
            "breakpoints": self.breakpoints_.tolist(),
            "fitted": self.fitted_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorProfile":
        prof = cls(window=d["window"], kind=d["kind"])
        prof.window_ = d["window"]
        prof.window_stats_ = np.asarray(d["window_stats"], dtype=np.float64)
        prof.breakpoints_ = np.asarray(d["breakpoints"], dtype=np.float64)
        prof.fitted_ = np.asarray(d["fitted"], dtype=np.float64)
        prof.valid_range_ = tuple(d["valid_range"])
        return prof

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    def plot(self) -> str:
        xs, ys = self.window_stats_[:, 0], self.window_stats_[:, 1]
        top = float(max(ys.max(), self.fitted_.max()))
        plot = Plot((float(xs.min()), float(xs.max())), (0.0, top), xlabel=self.kind, ylabel="RMSE",
                    title="Cross-validated error profile")
        plot.points(xs, ys, "#7570b3", label="window RMSE")
        plot.line(self.breakpoints_, self.fitted_, "#d95f02", label="monotone fit", width=2.0)
        return plot.to_svg()


def error_profile(cv: CVResult, values, window=None, predictor_kind: str = DI_KIND) -> ErrorProfile:
    """Fit an :class:`ErrorProfile` to pooled CV residuals and per-row DI/LPD."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != cv.observed.shape[0]:
        raise ValueError("one DI/LPD value is needed per pooled CV row")
    return ErrorProfile(window=window, kind=predictor_kind).fit(values, cv.residuals)


@dataclass
class MultiCVResult:
    cv: CVResult
    di: np.ndarray
    cluster_counts: List[int]
    fold_assignments: List[FoldAssignment]

    def __iter__(self):
        return iter((self.cv, self.di))


def _cluster_folds(Xs: np.ndarray, c: int, seed: int) -> FoldAssignment:
    n = Xs.shape[0]
    if c == n:
        labels = np.arange(n)
    else:
        km = KMeans(n_clusters=c, n_init=KMEANS_RESTARTS, random_state=derive_seed(seed, "multicv", str(c)))
        labels = km.fit_predict(Xs)
    _, fold_of = np.unique(labels, return_inverse=True)
    k = int(fold_of.max()) + 1
    return FoldAssignment(fold_of, [np.flatnonzero(fold_of != f) for f in range(k)],
                          method=f"predictor-clusters-{c}", seed=seed)


def multicv_calibrate(data: Dataset, model, trained: TrainDI, cluster_counts: Optional[Sequence[int]] = None,
                      seed: int = 0, threads: int = 1) -> MultiCVResult:
    """Repeat CV with folds from predictor-space clusterings of increasing count.

    Each count ``c`` clusters the standardized predictors into ``c`` groups
    (``c == n`` is leave-one-out), cross-validates ``model`` on them and
    computes every row's DI to the nearest row outside its fold. Results are
    pooled in order of cluster count, then row.
    """
    n = data.n
    if n < 3:
        raise ValueError("multicv needs at least three rows")
    if cluster_counts is None:
        cluster_counts = [3, 5, 10, 20, n]
    counts = []
    for c in sorted(set(int(c) for c in cluster_counts)):
        if c > n:
            logger.warning("skipping %d clusters: only %d rows", c, n)
        elif c < 2:
            logger.warning("skipping %d clusters: need at least 2", c)
        else:
            counts.append(c)
    if not counts:
        raise ValueError("no usable cluster counts")
    sub = data.select(trained.names)
    Xs = (sub.X - trained.means) / trained.sds

    def run(c):
        folds = _cluster_folds(Xs, c, seed)
        res = cross_validate(sub, model, folds)
        di = cv_distances(trained.train_rows, folds) / trained.d_bar
        return folds, res, di

    runs = parallel_map(run, counts, threads)
    pooled = CVResult.concat([r[1] for r in runs])
    return MultiCVResult(pooled, np.concatenate([r[2] for r in runs]), counts, [r[0] for r in runs])


def predict_error(profile: ErrorProfile, value_grid: RasterStack, aoa_grid: RasterStack,
                  name: str = "expected_RMSE") -> RasterStack:
    """Evaluate the profile per cell and blank cells outside the AOA."""
    kind = next(iter(value_grid.bands)) if len(value_grid.bands) == 1 else None
    if profile.kind in value_grid.bands:
        kind = profile.kind
    if kind != profile.kind:
        raise ValueError(f"profile was fit on {profile.kind} but the grid holds {list(value_grid.bands)}")
    values = value_grid.band(kind)
    expected = value_grid.like({name: profile.predict(values)})
    return mask_by_aoa(expected, aoa_grid)
