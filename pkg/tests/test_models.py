import zlib

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone
from sklearn.neighbors import KNeighborsRegressor

from spatialmap.folds import random_kfold
from spatialmap.models import (CVResult, Dataset, KNNRegressor, RandomForest, cross_validate, default_grid,
                               global_validation, load_model, predict_raster, save_model, tune)
from spatialmap.raster import RasterStack


def test_global_validation_hand_table():
    m = global_validation([1, 2, 3, 4], [1, 3, 2, 4])
    assert m["RMSE"] == pytest.approx(np.sqrt(0.5), rel=1e-15)
    assert m["MAE"] == 0.5
    assert m["R2"] == pytest.approx(0.64, rel=1e-12)  # Pearson r = 0.8
    assert m["R2_sse"] == pytest.approx(0.6, rel=1e-12)
    assert m["n"] == 4


def test_global_validation_constant_prediction():
    m = global_validation([1.0, 2.0, 3.0], [2.0, 2.0, 2.0])
    assert m["R2"] is None and m["R2_sse"] == 0.0


def _data(n=120, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = 3 * np.sin(2 * X[:, 0]) + X[:, 1] + rng.normal(0, 0.1, n)
    return X, y


def test_forest_of_stumps_is_mean_of_bootstrap_means():
    # a node with <= min_node_size rows is a leaf, so every tree is its bootstrap mean
    X, y = _data(30)
    rf = RandomForest(num_trees=7, min_node_size=30, seed=4, importance=None).fit(X, y)
    streams = np.random.SeedSequence(4, spawn_key=(zlib.crc32(b"rf"),)).spawn(7)
    expected = np.mean([y[np.random.default_rng(s).integers(0, 30, 30)].mean() for s in streams])
    np.testing.assert_allclose(rf.predict(X), expected, rtol=1e-13)


def test_fully_grown_tree_reproduces_its_bootstrap_sample():
    X, y = _data(50)
    rf = RandomForest(num_trees=1, mtry=4, min_node_size=1, seed=2, importance=None).fit(X, y)
    rows = np.random.default_rng(np.random.SeedSequence(2, spawn_key=(zlib.crc32(b"rf"),)).spawn(1)[0]).integers(0, 50, 50)
    # leaves may average bootstrap duplicates of one row, hence the ulp tolerance
    np.testing.assert_allclose(rf.predict(X[rows]), y[rows], rtol=1e-14)


def test_forest_deterministic_and_thread_independent():
    X, y = _data()
    a = RandomForest(num_trees=20, seed=1).fit(X, y)
    b = RandomForest(num_trees=20, seed=1, threads=4).fit(X, y)
    np.testing.assert_array_equal(a.predict(X), b.predict(X))
    np.testing.assert_array_equal(a.feature_importances_, b.feature_importances_)
    c = RandomForest(num_trees=20, seed=2).fit(X, y)
    assert not np.array_equal(a.predict(X), c.predict(X))


@given(st.floats(0.01, 100), st.floats(-100, 100))
def test_forest_invariant_to_affine_column_rescaling(scale, shift):
    X, y = _data(60, 3)
    Z = X.copy()
    Z[:, 1] = scale * Z[:, 1] + shift
    a = RandomForest(num_trees=5, seed=0).fit(X, y)
    b = RandomForest(num_trees=5, seed=0).fit(Z, y)
    np.testing.assert_array_equal(a.predict(X), b.predict(Z))


def test_permutation_importance_ranks_signal_first():
    X, y = _data(200)
    rf = RandomForest(num_trees=60, seed=0).fit(X, y, feature_names=["s", "l", "n1", "n2"])
    imp = rf.feature_importances_
    assert imp[0] > imp[1] > max(imp[2], imp[3])
    assert np.all(imp >= 0)


def test_constant_response():
    X, _ = _data(40)
    rf = RandomForest(num_trees=5).fit(X, np.full(40, 2.5))
    np.testing.assert_array_equal(rf.predict(X), 2.5)


def test_predict_aligns_by_name_and_handles_nan():
    X, y = _data(60)
    names = ["a", "b", "c", "d"]
    rf = RandomForest(num_trees=10).fit(X, y, feature_names=names)
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(rf.predict(X[:, perm], feature_names=[names[j] for j in perm]), rf.predict(X))
    Xn = X[:3].copy()
    Xn[1, 2] = np.nan
    assert np.isnan(rf.predict(Xn)).tolist() == [False, True, False]
    with pytest.raises((KeyError, ValueError)):
        rf.predict(X, feature_names=["a", "b", "c", "zz"])


def test_mtry_validation():
    X, y = _data(20)
    with pytest.raises(ValueError, match="mtry"):
        RandomForest(mtry=9).fit(X, y)
    assert RandomForest(num_trees=1).fit(X, y).mtry_ == 2


def test_knn_matches_sklearn():
    X, y = _data(70)
    Xq = np.random.default_rng(9).normal(size=(25, 4))
    ours = KNNRegressor(k_neighbors=4).fit(X, y).predict(Xq)
    mu, sd = X.mean(0), X.std(0, ddof=1)
    ref = KNeighborsRegressor(n_neighbors=4).fit((X - mu) / sd, y).predict((Xq - mu) / sd)
    np.testing.assert_allclose(ours, ref, rtol=1e-12)


@pytest.mark.parametrize("model", [RandomForest(num_trees=8, seed=3), KNNRegressor(3)])
def test_model_file_roundtrip(tmp_path, model):
    X, y = _data(50)
    m = clone(model).fit(X, y, feature_names=["a", "b", "c", "d"])
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    np.testing.assert_array_equal(back.predict(X), m.predict(X))
    assert back.get_params() == {**m.get_params(), **({"threads": 1} if "threads" in m.get_params() else {})}
    np.testing.assert_array_equal(back.feature_importances_, m.feature_importances_)


def test_cross_validate_pools_every_row_once():
    X, y = _data(45)
    data = Dataset(X, y, ["a", "b", "c", "d"])
    folds = random_kfold(45, 5, 0)
    res = cross_validate(data, KNNRegressor(3), folds)
    np.testing.assert_array_equal(res.row, np.arange(45))
    # manual loop oracle
    expected = np.empty(45)
    for train, test in folds.split():
        expected[test] = KNNRegressor(3).fit(X[train], y[train]).predict(X[test])
    np.testing.assert_array_equal(res.predicted, expected)
    np.testing.assert_array_equal(res.fold, folds.fold_of)
    assert res.metrics == global_validation(y, expected)


def test_cv_result_csv_roundtrip(tmp_path):
    res = CVResult(np.array([0, 1, 2]), np.array([0, 1, 0]), np.array([1.0, 2.0, 3.5]), np.array([1.5, 1.0 / 3, 3.0]))
    res.write_csv(tmp_path / "cv.csv")
    assert open(tmp_path / "cv.csv").readline().strip() == "row,fold,observed,predicted"
    back = CVResult.read_csv(tmp_path / "cv.csv")
    np.testing.assert_array_equal(back.predicted, res.predicted)


@pytest.mark.parametrize("p,expected", [(1, [1]), (2, [1, 2]), (6, [2, 3, 6]), (9, [3, 4, 9])])
def test_default_grid(p, expected):
    assert [g["mtry"] for g in default_grid(p)] == expected


def test_tune_picks_lowest_rmse():
    X, y = _data(80)
    data = Dataset(X, y, ["a", "b", "c", "d"])
    res = tune(data, random_kfold(80, 4, 0), default_grid(4), RandomForest(num_trees=15, seed=1))
    rmses = [row["RMSE"] for row in res.table]
    assert res.best_params == default_grid(4)[int(np.argmin(rmses))]
    assert sum(row["best"] for row in res.table) == 1
    assert res.model.mtry_ == res.best_params["mtry"]


def test_predict_raster_keeps_nodata():
    X, y = _data(40)
    rf = RandomForest(num_trees=5).fit(X[:, :2], y, feature_names=["u", "v"])
    u = np.random.default_rng(0).normal(size=(3, 3))
    v = u.copy()
    v[0, 0] = np.nan
    pred = predict_raster(rf, RasterStack(3, 3, bands={"u": u, "v": v, "extra": u})).band("prediction")
    assert np.isnan(pred[0, 0]) and np.isfinite(pred).sum() == 8
    with pytest.raises(KeyError, match="v"):
        predict_raster(rf, RasterStack(3, 3, bands={"u": u}))
