"""Nearest-neighbour distance distributions in geographic or feature space."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ._utils import derive_rng
from .folds import check_folds, cv_distances
from .geom import PointSet, ecdf_of, nnd_between, nnd_within, wasserstein1
from .raster import RasterStack, valid_cell_centers
from .svg import FALLBACK_COLORS, GROUP_COLORS, Plot

logger = logging.getLogger(__name__)

SAMPLE = "sample-to-sample"
PREDICTION = "prediction-to-sample"
CV = "CV-distances"
TEST = "test-to-sample"

DEFAULT_DOMAIN_SAMPLE = 1000
DENSITY_BINS = 64


@dataclass
class DistanceDistributions:
    groups: Dict[str, np.ndarray] = field(default_factory=dict)
    space: str = "geographic"

    def ecdf(self, name):
        return ecdf_of(self.groups[name])

    def W(self, a: str, b: str) -> float:
        return wasserstein1(self.ecdf(a), self.ecdf(b))

    def summary(self) -> dict:
        out = {"space": self.space, "groups": {}}
        for name, d in self.groups.items():
            out["groups"][name] = {"n": int(d.size), "mean": float(d.mean()), "median": float(np.median(d))}
        if PREDICTION in self.groups:
            out["W_to_prediction"] = {
                name: self.W(name, PREDICTION) for name in self.groups if name != PREDICTION}
        return out

    def to_dict(self) -> dict:
        return {"space": self.space, "groups": {k: v.tolist() for k, v in self.groups.items()}}


def sample_prediction_points(grid: RasterStack, n: int = DEFAULT_DOMAIN_SAMPLE, seed: int = 0,
                             crs_kind: str = "projected") -> PointSet:
    """Up to ``n`` distinct valid cell centres, drawn uniformly."""
    centers = valid_cell_centers(grid)
    if centers.shape[0] == 0:
        raise ValueError("raster has no cells with data")
    if centers.shape[0] > n:
        rows = np.sort(derive_rng(seed, "geodist", "domain").choice(centers.shape[0], n, replace=False))
        centers = centers[rows]
    return PointSet(centers, crs_kind)


def standardize_features(train, *others):
    """Scale by training mean/sd; zero-variance columns are dropped."""
    train = np.asarray(train, dtype=np.float64)
    mean = train.mean(axis=0)
    sd = train.std(axis=0, ddof=1)
    keep = sd > 0
    if not keep.all():
        logger.warning("dropping %d zero-variance predictor(s) from feature space", int((~keep).sum()))
    scale = lambda X: (np.asarray(X, dtype=np.float64)[:, keep] - mean[keep]) / sd[keep]
    return (scale(train),) + tuple(scale(o) for o in others)


def geodist(training, domain, folds=None, test=None, space: str = "geographic") -> DistanceDistributions:
    """Compare sample-to-sample, prediction-to-sample, CV and test NND distributions.

    In geographic space ``training``, ``domain`` and ``test`` are PointSets.
    In feature space they are predictor matrices (same columns); they are
    standardized with the training mean and sd before distances are taken.
    """
    if space not in ("geographic", "feature"):
        raise ValueError("space must be 'geographic' or 'feature'")
    if space == "feature":
        extra = [domain] + ([test] if test is not None else [])
        scaled = standardize_features(training, *extra)
        training, domain = scaled[0], scaled[1]
        if test is not None:
            test = scaled[2]
    if len(training) < 2:
        raise ValueError("geodist needs at least two training points")
    groups = {SAMPLE: nnd_within(training), PREDICTION: nnd_between(domain, training)}
    if folds is not None:
        check_folds(folds, len(training))
        d = cv_distances(training, folds)
        groups[CV] = d[np.isfinite(d)]
    if test is not None:
        groups[TEST] = nnd_between(test, training)
    return DistanceDistributions(groups, space)


def plot_distributions(d: DistanceDistributions, kind: str = "density") -> str:
    """SVG of every group as an ECDF step curve or a 64-bin density polyline."""
    if kind not in ("density", "ecdf"):
        raise ValueError("kind must be 'density' or 'ecdf'")
    pooled = np.concatenate(list(d.groups.values()))
    lo, hi = float(pooled.min()), float(pooled.max())
    unit = "m" if d.space == "geographic" else "standardized units"
    xlabel = f"nearest neighbour distance ({unit})"
    colors = {}
    for j, name in enumerate(d.groups):
        colors[name] = GROUP_COLORS.get(name, FALLBACK_COLORS[j % len(FALLBACK_COLORS)])

    if kind == "ecdf":
        plot = Plot((0.0, hi), (0.0, 1.0), xlabel=xlabel, ylabel="ECDF", title="Nearest neighbour distances")
        for name, values in d.groups.items():
            F = ecdf_of(values)
            xs, ys = [0.0], [0.0]
            for v in np.unique(F.sorted_values):
                xs += [v, v]
                ys += [ys[-1], float(F(v))]
            xs.append(hi)
            ys.append(1.0)
            plot.line(xs, ys, colors[name], label=name)
        return plot.to_svg()

    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, DENSITY_BINS + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    curves = {name: np.histogram(v, bins=edges, density=True)[0] for name, v in d.groups.items()}
    top = max(float(c.max()) for c in curves.values())
    plot = Plot((lo, hi), (0.0, top), xlabel=xlabel, ylabel="density", title="Nearest neighbour distances")
    for name, c in curves.items():
        plot.line(centers, c, colors[name], label=name)
    return plot.to_svg()
