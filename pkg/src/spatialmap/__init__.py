"""Spatial prediction models with validation that respects prediction-time distances."""

__version__ = "0.1.0"

from .geom import ECDF, PointSet, distance, ecdf_of, nn_index, nnd_between, nnd_within, wasserstein1
from .raster import RasterStack, read_grid, read_stack, write_ascii_grid, write_stack
from .folds import (FoldAssignment, NNDMExclusion, cv_distances, knndm, load_folds, nndm, random_kfold,
                    save_folds, spacetime_folds)
from .geodist import DistanceDistributions, geodist, sample_prediction_points
from .models import (CVResult, Dataset, KNNRegressor, RandomForest, cross_validate, global_validation,
                     load_model, predict_raster, save_model, tune)
from .ffs import ForwardFeatureSelection, SelectionPath, ffs
from .aoa import AOAResult, AreaOfApplicability, TrainDI, aoa, fit_train_di, train_di, update_threshold
from .errorprofiles import ErrorProfile, error_profile, multicv_calibrate, predict_error
from .synth import SyntheticScenario, generate_synthetic
from .tables import read_training, write_training

__all__ = [
    "ECDF",
    "PointSet",
    "distance",
    "ecdf_of",
    "nn_index",
    "nnd_between",
    "nnd_within",
    "wasserstein1",
    "RasterStack",
    "read_grid",
    "read_stack",
    "write_ascii_grid",
    "write_stack",
    "FoldAssignment",
    "NNDMExclusion",
    "cv_distances",
    "knndm",
    "load_folds",
    "nndm",
    "random_kfold",
    "save_folds",
    "spacetime_folds",
    "DistanceDistributions",
    "geodist",
    "sample_prediction_points",
    "CVResult",
    "Dataset",
    "KNNRegressor",
    "RandomForest",
    "cross_validate",
    "global_validation",
    "load_model",
    "predict_raster",
    "save_model",
    "tune",
    "ForwardFeatureSelection",
    "SelectionPath",
    "ffs",
    "AOAResult",
    "AreaOfApplicability",
    "TrainDI",
    "aoa",
    "fit_train_di",
    "train_di",
    "update_threshold",
    "ErrorProfile",
    "error_profile",
    "multicv_calibrate",
    "predict_error",
    "SyntheticScenario",
    "generate_synthetic",
    "read_training",
    "write_training",
]
