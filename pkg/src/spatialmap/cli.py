"""Command-line interface: ``spatialmap <subcommand> ...``.

Every subcommand writes its artifacts under ``--out`` and prints a metrics
JSON document (``schema_version`` 1) to stdout. Randomness comes from
``--seed`` only; ``--threads`` changes speed, never results.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np
from sklearn.base import clone

from . import __version__
from ._utils import derive_seed
from .aoa import TrainDI, aoa as compute_aoa, mask_by_aoa, train_di, update_threshold
from .errorprofiles import error_profile, multicv_calibrate, predict_error
from .ffs import ffs
from .folds import cv_distances, knndm, load_folds, nndm, random_kfold, save_folds, spacetime_folds
from .geodist import DEFAULT_DOMAIN_SAMPLE, geodist, plot_distributions, sample_prediction_points
from .geom import ecdf_of, nnd_between, wasserstein1
from .models import KNNRegressor, RandomForest, cross_validate, default_grid, load_model, predict_raster, save_model, tune
from .raster import extract_at_points, read_grid, read_stack, write_ascii_grid, write_stack
from .svg import heatmap
from .synth import SyntheticScenario, generate_synthetic
from .tables import read_training, write_training

SCHEMA_VERSION = 1
logger = logging.getLogger("spatialmap")


def _emit(command: str, payload: dict) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, **payload}
    sys.stdout.write(json.dumps(doc, sort_keys=True) + "\n")


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def _load_training(args, ignore=()):
    data, extra = read_training(args.train, response=args.response, crs_kind=args.crs, ignore=ignore)
    return data, extra


def _domain(args, stack, data):
    return sample_prediction_points(stack, args.sample_size, derive_seed(args.seed, "domain"), data.points.crs_kind)


# ---------------------------------------------------------------------------
# subcommands


def cmd_geodist(args):
    stack = read_stack(args.raster)
    data, _ = _load_training(args)
    domain = _domain(args, stack, data)
    folds = load_folds(args.folds) if args.folds else None
    test = read_training(args.test, args.response, args.crs)[0] if args.test else None
    if args.space == "feature":
        domain_rows, keep = extract_at_points(stack, domain, data.names)
        dists = geodist(data.X, domain_rows[keep], folds, None if test is None else test.columns(data.names),
                        space="feature")
    else:
        dists = geodist(data.points, domain, folds, None if test is None else test.points)
    _write_json(os.path.join(args.out, "geodist.json"), dists.to_dict())
    svg_name = f"geodist_{args.stat}.svg"
    _write_text(os.path.join(args.out, svg_name), plot_distributions(dists, args.stat))
    _emit("geodist", {"summary": dists.summary(), "plot": svg_name})


def cmd_folds(args):
    ignore = [c for c in (args.spacevar, args.timevar) if c and c != "t"]
    data, extra = _load_training(args, ignore)
    n = data.n
    domain = None
    if args.raster:
        domain = _domain(args, read_stack(args.raster), data)
    if args.method == "random":
        folds = random_kfold(n, args.k, args.seed)
    elif args.method == "spacetime":
        labels = lambda col: None if not col else (data.points.time if col == "t" else np.asarray(extra[col]))
        folds = spacetime_folds(labels(args.spacevar), labels(args.timevar), args.k, args.seed)
    elif args.method == "nndm":
        if domain is None:
            raise ValueError("folds nndm needs --raster")
        folds = nndm(data.points, domain, args.min_train_fraction)
    else:
        if domain is None:
            raise ValueError("folds knndm needs --raster")
        folds = knndm(data.points, domain, args.k, args.seed, threads=args.threads)
    if domain is not None and folds.W is None:
        d = cv_distances(data.points, folds)
        folds.W = wasserstein1(ecdf_of(d[np.isfinite(d)]), ecdf_of(nnd_between(domain, data.points)))
    save_folds(folds, os.path.join(args.out, "folds.json"))
    payload = {"method": folds.method, "n": folds.n, "W": folds.W}
    if hasattr(folds, "fold_of"):
        payload["k"] = folds.k
        payload["fold_sizes"] = [int(folds.test_indices(f).size) for f in range(folds.k)]
    else:
        payload["exclusion_sizes"] = {"min": int(min(e.size for e in folds.exclude)),
                                      "max": int(max(e.size for e in folds.exclude))}
    _emit("folds", payload)


def _model_spec(args):
    if args.model == "knn":
        return KNNRegressor(k_neighbors=args.k_neighbors)
    mtry = None if args.mtry == "auto" else int(args.mtry)
    return RandomForest(num_trees=args.num_trees, mtry=mtry, min_node_size=args.min_node_size,
                        seed=derive_seed(args.seed, "train", "rf"), threads=args.threads)


def cmd_train(args):
    """Select, tune and fit on the first fold file; report CV metrics for every fold file."""
    data, _ = _load_training(args)
    all_folds = [load_folds(path) for path in args.folds]
    folds = all_folds[0]
    spec = _model_spec(args)
    payload = {"folds": folds.method, "model": args.model}
    if args.ffs:
        path = ffs(data, spec, folds, threads=args.threads)
        path.write_log(os.path.join(args.out, "ffs_log.csv"))
        _write_text(os.path.join(args.out, "ffs.svg"), path.plot())
        payload["selected"] = path.final_set
        payload["ffs_steps"] = [{k: s[k] for k in ("set", "RMSE", "R2")} for s in path.steps]
        data = data.select(path.final_set)
    if args.model == "rf" and args.mtry == "auto":
        result = tune(data, folds, default_grid(data.p), spec, threads=args.threads)
        model, cv = result.model, result.best_cv
        spec = clone(spec).set_params(**result.best_params)
        payload["tuning"] = result.table
    else:
        cv = cross_validate(data, spec, folds, threads=args.threads)
        model = clone(spec).fit(data.X, data.y, feature_names=data.names)
    save_model(model, os.path.join(args.out, "model.json"))
    cv.write_csv(os.path.join(args.out, "cv_predictions.csv"))
    payload["metrics"] = cv.metrics
    if len(all_folds) > 1:
        payload["cv_by_folds"] = [{"folds": folds.method, "metrics": cv.metrics}] + [
            {"folds": other.method, "metrics": cross_validate(data, spec, other, threads=args.threads).metrics}
            for other in all_folds[1:]]
    payload["predictors"] = list(data.names)
    payload["importance"] = dict(zip(data.names, model.feature_importances_.tolist()))
    _emit("train", payload)


def cmd_predict(args):
    model = load_model(args.model)
    stack = read_stack(args.raster)
    pred = predict_raster(model, stack)
    write_ascii_grid(os.path.join(args.out, "prediction.asc"), pred.band("prediction"), pred)
    values = pred.band("prediction")
    payload = {"cells": int(np.isfinite(values).sum()), "mean": float(np.nanmean(values)),
               "min": float(np.nanmin(values)), "max": float(np.nanmax(values))}
    if args.mask:
        masked = mask_by_aoa(pred, read_grid(args.mask))
        write_ascii_grid(os.path.join(args.out, "prediction_aoa.asc"), masked.band("prediction"), masked)
        payload["cells_in_aoa"] = int(np.isfinite(masked.band("prediction")).sum())
    _emit("predict", payload)


def cmd_aoa(args):
    model = load_model(args.model)
    data, _ = _load_training(args)
    folds = load_folds(args.folds)
    stack = read_stack(args.raster)
    trained = train_di(data, model, folds, metric=args.metric, seed=derive_seed(args.seed, "aoa"))
    result = compute_aoa(stack, trained, compute_lpd=args.lpd)
    outdir = os.path.join(args.out, "aoa")
    write_stack(result.stack(), outdir)
    trained.save(os.path.join(outdir, "traindi.json"))
    inside = result.AOA.band("AOA")
    payload = {"threshold": trained.threshold, "d_bar": trained.d_bar, "metric": trained.metric,
               "fraction_inside": float(np.nanmean(inside)), "weights": dict(zip(trained.names, trained.weights.tolist()))}
    if result.LPD is not None:
        payload["max_LPD"] = int(np.nanmax(result.LPD.band("LPD")))
    _emit("aoa", payload)


def cmd_errorprofile(args):
    model = load_model(args.model)
    data, _ = _load_training(args)
    trained = TrainDI.load(os.path.join(args.aoa, "traindi.json"))
    grids = read_stack(os.path.join(args.aoa, "manifest.json"))
    spec = clone(model)
    if "threads" in spec.get_params():
        spec.set_params(threads=args.threads)
    payload = {"threshold": trained.threshold}
    if args.multicv:
        mc = multicv_calibrate(data, spec, trained, seed=derive_seed(args.seed, "multicv"), threads=args.threads)
        cv, values = mc.cv, mc.di
        trained = update_threshold(trained, values)
        payload["cluster_counts"] = mc.cluster_counts
        payload["updated_threshold"] = trained.threshold
        di = grids.band("DI")
        inside = np.where(np.isfinite(di), (di <= trained.threshold).astype(np.float64), np.nan)
        bands = dict(grids.bands)
        bands["AOA"] = inside
        grids = grids.like(bands)
        outdir = os.path.join(args.out, "aoa_updated")
        write_stack(grids, outdir)
        trained.save(os.path.join(outdir, "traindi.json"))
    else:
        folds = trained.fold_object()
        if folds is None:
            raise ValueError("traindi.json records no folds; rerun aoa")
        cv = cross_validate(data.select(trained.names), spec, folds, threads=args.threads)
        values = trained.train_di[cv.row]
    profile = error_profile(cv, values, window=args.window)
    profile.save(os.path.join(args.out, "errorprofile.json"))
    _write_text(os.path.join(args.out, "errorprofile.svg"), profile.plot())
    aoa_grid = grids.like({"AOA": grids.band("AOA")})
    expected = predict_error(profile, grids.like({"DI": grids.band("DI")}), aoa_grid)
    write_ascii_grid(os.path.join(args.out, "expected_error.asc"), expected.band("expected_RMSE"), expected)
    values_in = expected.band("expected_RMSE")
    payload.update({"window": profile.window_, "valid_range": list(profile.valid_range_),
                    "cv_metrics": cv.metrics,
                    "expected_RMSE_mean": float(np.nanmean(values_in)) if np.isfinite(values_in).any() else None})
    _emit("errorprofile", payload)


def cmd_synth(args):
    with open(args.scenario, encoding="utf-8") as fh:
        spec = json.load(fh)
    spec.setdefault("seed", args.seed)
    scenario = SyntheticScenario(**spec)
    sd = generate_synthetic(scenario)
    write_stack(sd.stack, os.path.join(args.out, "raster"))
    write_training(os.path.join(args.out, "training.csv"), sd.data)
    write_ascii_grid(os.path.join(args.out, "truth.asc"), sd.truth.band("truth"), sd.truth)
    _write_json(os.path.join(args.out, "scenario.json"), scenario.to_dict())
    _emit("synth", {"n_samples": sd.data.n, "predictors": sd.data.names, "informative": sd.informative,
                    "grid": [scenario.size, scenario.size]})


def cmd_render(args):
    grid = read_grid(args.grid)
    name = next(iter(grid.bands))
    if args.mask:
        grid = mask_by_aoa(grid, read_grid(args.mask))
    svg = heatmap(grid.band(name), palette=args.palette, title=name)
    out = os.path.join(args.out, f"{name}.svg")
    _write_text(out, svg)
    values = grid.band(name)
    _emit("render", {"file": os.path.basename(out), "cells": int(np.isfinite(values).sum())})


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default="out")

    table = argparse.ArgumentParser(add_help=False)
    table.add_argument("--train", required=True, help="training CSV (x, y, [t], predictors..., response)")
    table.add_argument("--response", default="response")
    table.add_argument("--crs", choices=["projected", "geographic"], default="projected")

    domain = argparse.ArgumentParser(add_help=False)
    domain.add_argument("--sample-size", type=int, default=DEFAULT_DOMAIN_SAMPLE,
                        help="number of raster cells sampled to represent the prediction domain")

    parser = argparse.ArgumentParser(prog="spatialmap", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geodist", parents=[common, table, domain], help="nearest neighbour distance distributions")
    p.add_argument("--raster", required=True)
    p.add_argument("--folds")
    p.add_argument("--test", help="independent test points CSV")
    p.add_argument("--space", choices=["geographic", "feature"], default="geographic")
    p.add_argument("--stat", choices=["ecdf", "density"], default="density")
    p.set_defaults(func=cmd_geodist)

    p = sub.add_parser("folds", parents=[common, table, domain], help="build cross-validation folds")
    p.add_argument("method", choices=["random", "spacetime", "nndm", "knndm"])
    p.add_argument("--raster")
    p.add_argument("-k", type=int, default=5)
    p.add_argument("--spacevar")
    p.add_argument("--timevar")
    p.add_argument("--min-train-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_folds)

    p = sub.add_parser("train", parents=[common, table], help="cross-validate and fit a model")
    p.add_argument("--folds", required=True, nargs="+",
                   help="fold file(s); the first drives selection and tuning, all are reported")
    p.add_argument("--ffs", action="store_true", help="forward feature selection")
    p.add_argument("--model", choices=["rf", "knn"], default="rf")
    p.add_argument("--num-trees", type=int, default=100)
    p.add_argument("--mtry", default="auto", help="'auto' tunes over {sqrt(p), p/2, p}")
    p.add_argument("--min-node-size", type=int, default=5)
    p.add_argument("--k-neighbors", type=int, default=5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict a raster stack")
    p.add_argument("--model", required=True)
    p.add_argument("--raster", required=True)
    p.add_argument("--mask", help="AOA grid; also writes the masked prediction")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("aoa", parents=[common, table], help="dissimilarity index and area of applicability")
    p.add_argument("--model", required=True)
    p.add_argument("--folds", required=True)
    p.add_argument("--raster", required=True)
    p.add_argument("--lpd", action="store_true")
    p.add_argument("--metric", choices=["euclidean", "mahalanobis"], default="euclidean")
    p.set_defaults(func=cmd_aoa)

    p = sub.add_parser("errorprofile", parents=[common, table], help="DI-error relationship and expected error map")
    p.add_argument("--model", required=True)
    p.add_argument("--aoa", required=True, help="directory written by the aoa subcommand")
    p.add_argument("--multicv", action="store_true")
    p.add_argument("--window", type=int, default=None, help="default max(10, n/20)")
    p.set_defaults(func=cmd_errorprofile)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scenario")
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", parents=[common], help="render an ASCII grid as SVG")
    p.add_argument("--grid", required=True)
    p.add_argument("--mask")
    p.add_argument("--palette", choices=["viridis", "magma", "grey"], default="viridis")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        os.makedirs(args.out, exist_ok=True)
        args.func(args)
    except (OSError, ValueError, KeyError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
