import importlib

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from spatialmap.aoa import (AreaOfApplicability, TrainDI, aoa, fit_train_di, importance_weights, mask_by_aoa,
                            mean_pairwise_distance, update_threshold, whisker_threshold)
from spatialmap.folds import random_kfold
from spatialmap.raster import RasterStack

aoa_mod = importlib.import_module("spatialmap.aoa")


def oracle_di(X, folds, weights, grid_rows, mahalanobis=False):
    """Loop-based DI/LPD reference, written independently of the package."""
    X = np.asarray(X, float)
    mu, sd = X.mean(0), X.std(0, ddof=1)
    w = np.asarray(weights, float) / np.mean(weights)
    Z = (X - mu) / sd * w
    G = (grid_rows - mu) / sd * w
    if mahalanobis:
        VI = np.linalg.inv(np.cov(Z, rowvar=False))
        dist = lambda a, b: float(np.sqrt((a - b) @ VI @ (a - b)))
    else:
        dist = lambda a, b: float(np.sqrt(np.sum((a - b) ** 2)))
    n = len(Z)
    pair = [dist(Z[i], Z[j]) for i in range(n) for j in range(i + 1, n)]
    d_bar = np.mean(pair)
    tdi = np.empty(n)
    for i in range(n):
        f = folds.fold_of[i]
        tdi[i] = min(dist(Z[i], Z[j]) for j in folds.index_train[f]) / d_bar
    q25, q75 = np.quantile(tdi, [0.25, 0.75])
    thr = q75 + 1.5 * (q75 - q25)
    di = np.empty(len(G))
    lpd = np.empty(len(G), dtype=int)
    for c, g in enumerate(G):
        d = np.array([dist(g, z) for z in Z]) / d_bar
        di[c], lpd[c] = d.min(), int(np.sum(d <= thr))
    return d_bar, tdi, thr, di, lpd


def test_whisker_hand_value():
    assert whisker_threshold([1, 2, 3, 4, 5]) == 7.0
    assert whisker_threshold([2.0, np.nan, 2.0]) == 2.0


def test_importance_weights():
    np.testing.assert_array_equal(importance_weights([1.0, 3.0]), [0.5, 1.5])
    np.testing.assert_array_equal(importance_weights([0.0, 0.0]), [1.0, 1.0])


def test_mean_pairwise_distance_hand():
    assert mean_pairwise_distance(np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]])) == pytest.approx(4.0, rel=1e-15)


def test_mean_pairwise_distance_subsample(monkeypatch):
    Z = np.random.default_rng(0).normal(size=(300, 3))
    exact = mean_pairwise_distance(Z)
    monkeypatch.setattr(aoa_mod, "MAX_EXACT_PAIRS_N", 100)
    monkeypatch.setattr(aoa_mod, "SUBSAMPLE_PAIRS", 200_000)
    assert mean_pairwise_distance(Z, seed=1) == pytest.approx(exact, rel=0.01)


@pytest.mark.parametrize("metric", ["euclidean", "mahalanobis"])
def test_di_lpd_match_loop_oracle(metric):
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 3)) @ np.array([[1, 0.4, 0], [0, 1, 0.3], [0, 0, 1]])
    folds = random_kfold(40, 4, 1)
    weights = np.array([2.0, 1.0, 0.5])
    Q = rng.normal(0, 1.5, size=(60, 3))
    trained = fit_train_di(X, ["a", "b", "c"], folds, importance_weights(weights), metric)
    d_bar, tdi, thr, di, lpd = oracle_di(X, folds, weights, Q, metric == "mahalanobis")
    assert trained.d_bar == pytest.approx(d_bar, rel=1e-12)
    np.testing.assert_allclose(trained.train_di, tdi, rtol=1e-10)
    assert trained.threshold == pytest.approx(thr, rel=1e-10)
    got_di, got_lpd = trained.di_lpd(Q)
    np.testing.assert_allclose(got_di, di, rtol=1e-10)
    np.testing.assert_array_equal(got_lpd, lpd)
    np.testing.assert_allclose(trained.di(Q), di, rtol=1e-10)


def test_zero_weight_column_ignored():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 3))
    folds = random_kfold(30, 3, 0)
    a = fit_train_di(X, list("abc"), folds, np.array([1.0, 1.0, 0.0]))
    b = fit_train_di(X[:, :2], list("ab"), folds, np.array([1.0, 1.0]))
    Q = rng.normal(size=(5, 3))
    np.testing.assert_allclose(a.di(Q), b.di(Q[:, :2]), rtol=1e-12)
    m = fit_train_di(X, list("abc"), folds, np.array([1.0, 1.0, 0.0]), "mahalanobis")
    assert m.whitening.shape == (2, 2)


def test_singular_mahalanobis_rejected():
    rng = np.random.default_rng(2)
    x = rng.normal(size=30)
    X = np.column_stack([x, 2 * x + 1, rng.normal(size=30)])
    with pytest.raises(ValueError, match="singular"):
        fit_train_di(X, list("abc"), random_kfold(30, 3, 0), metric="mahalanobis")


def test_grid_outputs_and_masking(tmp_path):
    rng = np.random.default_rng(4)
    X = rng.normal(size=(50, 2))
    trained = fit_train_di(X, ["u", "v"], random_kfold(50, 5, 0))
    u = np.linspace(-6, 6, 36).reshape(6, 6)
    v = u.T.copy()
    v[2, 2] = np.nan
    res = aoa(RasterStack(6, 6, bands={"u": u, "v": v}), trained, compute_lpd=True)
    A, L, D = res.AOA.band("AOA"), res.LPD.band("LPD"), res.DI.band("DI")
    assert np.isnan(A[2, 2]) and np.isnan(L[2, 2])
    ok = np.isfinite(A)
    np.testing.assert_array_equal(A[ok] == 0, L[ok] == 0)
    np.testing.assert_array_equal(A[ok] == 1, D[ok] <= trained.threshold)
    masked = mask_by_aoa(res.DI, res.AOA).band("DI")
    assert np.all(np.isnan(masked[A == 0]))
    trained.save(tmp_path / "t.json")
    back = TrainDI.load(tmp_path / "t.json")
    np.testing.assert_array_equal(back.di(X), trained.di(X))
    assert back.fold_object().k == 5


def test_update_threshold_only_changes_threshold():
    X = np.random.default_rng(0).normal(size=(20, 2))
    t = fit_train_di(X, ["a", "b"], random_kfold(20, 4, 0))
    u = update_threshold(t, [1.0, 2.0, 3.0, 4.0, 5.0])
    assert u.threshold == 7.0 and u.d_bar == t.d_bar


def test_estimator_interface():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 3))
    est = AreaOfApplicability().fit(X, folds=random_kfold(60, 5, 0))
    far = X[:5] + 10 * X.std(0)
    assert est.predict(far).tolist() == [0] * 5
    assert est.local_point_density(far).tolist() == [0] * 5
    assert est.get_params() == {"metric": "euclidean", "seed": 0}
    with pytest.raises(ValueError):
        AreaOfApplicability().fit(X)


@given(arrays(np.float64, 2, elements=st.floats(0.1, 50)), arrays(np.float64, 2, elements=st.floats(-50, 50)))
def test_di_affine_invariant(scale, shift):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(25, 2))
    Q = rng.normal(size=(10, 2))
    f = random_kfold(25, 5, 0)
    a = fit_train_di(X, ["a", "b"], f)
    b = fit_train_di(X * scale + shift, ["a", "b"], f)
    np.testing.assert_allclose(b.di(Q * scale + shift), a.di(Q), rtol=1e-9, atol=1e-12)
