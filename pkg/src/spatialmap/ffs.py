"""Forward feature selection driven by a fixed (spatial) fold assignment."""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from sklearn.base import BaseEstimator, MetaEstimatorMixin, RegressorMixin, clone

from ._utils import parallel_map, split_frame
from .folds import check_folds
from .models import Dataset, RandomForest, cross_validate
from .svg import Plot

logger = logging.getLogger(__name__)

REL_TOL = 1e-4


@dataclass
class SelectionPath:
    steps: List[dict]
    final_set: List[str]
    final_model: object
    log: List[dict] = field(default_factory=list)

    @property
    def n_evaluations(self) -> int:
        return sum(1 for entry in self.log if entry["action"] == "evaluate")

    def write_log(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "action", "candidate_set", "RMSE", "R2"])
            for e in self.log:
                r2 = "" if e["R2"] is None else repr(e["R2"])
                w.writerow([e["step"], e["action"], "+".join(e["candidate_set"]), repr(e["RMSE"]), r2])

    def plot(self) -> str:
        sizes = [len(s["set"]) for s in self.steps]
        rmse = [s["RMSE"] for s in self.steps]
        evals = [e for e in self.log if e["action"] == "evaluate"]
        ex = [len(e["candidate_set"]) for e in evals]
        ey = [e["RMSE"] for e in evals]
        lo, hi = min(ey + rmse), max(ey + rmse)
        plot = Plot((1.5, max(ex) + 0.5), (lo - 0.05 * (hi - lo), hi + 0.05 * (hi - lo)),
                    xlabel="number of variables", ylabel="RMSE", title="Forward feature selection")
        plot.points(ex, ey, "#999999", label="candidates")
        plot.line(sizes, rmse, "#d95f02", label="selected", width=2.0)
        plot.points(sizes, rmse, "#d95f02", r=3.5)
        return plot.to_svg()


def ffs(data: Dataset, model=None, folds=None, rel_tol: float = REL_TOL, threads: int = 1) -> SelectionPath:
    """Greedy forward selection starting from the best predictor pair.

    Every candidate set is cross-validated on the same ``folds``; a round
    accepts its best candidate only if pooled RMSE drops by more than
    ``rel_tol`` relative. Ties go to the candidate first in name order, and
    columns are always fitted in name order so input column order is
    irrelevant.
    """
    if data.p < 2:
        raise ValueError("forward feature selection needs at least two predictors")
    if folds is None:
        raise ValueError("ffs needs a fold assignment")
    check_folds(folds, data.n)
    model = RandomForest() if model is None else model
    names = sorted(data.names)
    log: List[dict] = []

    def evaluate(cset):
        cset = sorted(cset)
        try:
            res = cross_validate(data.select(cset), model, folds)
        except Exception as exc:
            raise RuntimeError(f"cross-validation failed for predictor set {cset}: {exc}") from exc
        return cset, res.metrics

    def run_round(step, candidates):
        results = parallel_map(evaluate, candidates, threads)
        best = None
        for cset, m in results:
            log.append({"step": step, "action": "evaluate", "candidate_set": cset, "RMSE": m["RMSE"], "R2": m["R2"]})
            if best is None or m["RMSE"] < best[1]["RMSE"]:
                best = (cset, m)
        return best

    best_set, best_m = run_round(0, [list(p) for p in itertools.combinations(names, 2)])
    log.append({"step": 0, "action": "accept", "candidate_set": best_set, "RMSE": best_m["RMSE"], "R2": best_m["R2"]})
    steps = [{"added": list(best_set), "set": list(best_set), "RMSE": best_m["RMSE"], "R2": best_m["R2"]}]
    current, current_rmse = list(best_set), best_m["RMSE"]

    step = 1
    while True:
        remaining = [n for n in names if n not in current]
        if not remaining:
            break
        cset, m = run_round(step, [current + [c] for c in remaining])
        if m["RMSE"] < current_rmse * (1.0 - rel_tol):
            added = [c for c in cset if c not in current]
            log.append({"step": step, "action": "accept", "candidate_set": cset, "RMSE": m["RMSE"], "R2": m["R2"]})
            steps.append({"added": added, "set": cset, "RMSE": m["RMSE"], "R2": m["R2"]})
            current, current_rmse = cset, m["RMSE"]
            step += 1
        else:
            log.append({"step": step, "action": "stop", "candidate_set": cset, "RMSE": m["RMSE"], "R2": m["R2"]})
            break

    final = clone(model).fit(data.columns(current), data.y, feature_names=current)
    logger.info("selected %s (RMSE %.4g)", current, current_rmse)
    return SelectionPath(steps, list(current), final, log)


class ForwardFeatureSelection(MetaEstimatorMixin, RegressorMixin, BaseEstimator):
    """Estimator form of :func:`ffs`; predicts with the refitted final model."""

    def __init__(self, estimator=None, folds=None, rel_tol=REL_TOL, threads=1):
        self.estimator = estimator
        self.folds = folds
        self.rel_tol = rel_tol
        self.threads = threads

    def fit(self, X, y, feature_names=None):
        X, names = split_frame(X, feature_names)
        X = np.asarray(X, dtype=np.float64)
        names = names or [f"x{j}" for j in range(X.shape[1])]
        data = Dataset(X, y, names)
        self.path_ = ffs(data, self.estimator, self.folds, self.rel_tol, self.threads)
        self.selected_features_ = self.path_.final_set
        self.estimator_ = self.path_.final_model
        self.feature_names_in_ = np.array(names, dtype=object)
        return self

    def predict(self, X, feature_names=None):
        X, names = split_frame(X, feature_names)
        names = names or list(self.feature_names_in_)
        X = np.asarray(X, dtype=np.float64)
        return self.estimator_.predict(X, feature_names=names)
