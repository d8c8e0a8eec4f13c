import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.model_selection import cross_val_score
from sklearn.linear_model import LinearRegression

from spatialmap.folds import (FoldAssignment, NNDMExclusion, cv_distances, knndm, load_folds, merge_clusters,
                              nndm, random_kfold, save_folds, spacetime_folds)
from spatialmap.geom import PointSet, ecdf_of, nnd_between, wasserstein1

from conftest import brute_nn, clustered_points


@given(st.integers(2, 60), st.integers(2, 10), st.integers(0, 2**32 - 1))
def test_random_kfold_partition(n, k, seed):
    if k > n:
        return
    f = random_kfold(n, k, seed)
    sizes = np.bincount(f.fold_of, minlength=k)
    assert sizes.sum() == n and sizes.max() - sizes.min() <= 1
    for train, test in f.split():
        assert np.intersect1d(train, test).size == 0 and train.size + test.size == n
    np.testing.assert_array_equal(f.fold_of, random_kfold(n, k, seed).fold_of)


def test_random_kfold_rejects_bad_k():
    with pytest.raises(ValueError):
        random_kfold(3, 4)


def test_folds_work_as_sklearn_cv():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    y = X @ [1.0, 2.0]
    scores = cross_val_score(LinearRegression(), X, y, cv=random_kfold(30, 3, 1))
    assert scores.shape == (3,)


def test_fold_validation():
    with pytest.raises(ValueError, match="holds out no rows"):
        FoldAssignment(np.array([0, 0, 0]), [np.array([], int), np.array([0])])
    with pytest.raises(ValueError, match="training side"):
        FoldAssignment(np.array([0, 1]), [np.array([0]), np.array([0])])
    with pytest.raises(ValueError, match="test point"):
        NNDMExclusion([np.array([1]), np.array([0, 1])])


def test_fold_files_roundtrip(tmp_path):
    f = random_kfold(10, 3, 2)
    f.W = 1.5
    save_folds(f, tmp_path / "f.json")
    g = load_folds(tmp_path / "f.json")
    assert g.method == "random" and g.W == 1.5 and g.seed == 2
    np.testing.assert_array_equal(g.fold_of, f.fold_of)
    e = NNDMExclusion([[0, 1], [1], [2, 0]], W=0.25)
    save_folds(e, tmp_path / "e.json")
    back = load_folds(tmp_path / "e.json")
    assert isinstance(back, NNDMExclusion) and back.exclude[2].tolist() == [0, 2]


def test_spacetime_leaves_no_shared_groups():
    rng = np.random.default_rng(3)
    space = rng.choice(list("abcdefgh"), 200)
    time = rng.integers(2000, 2010, 200)
    f = spacetime_folds(space, time, k=3, seed=1)
    for fold in range(f.k):
        held = f.test_indices(fold)
        train = f.index_train[fold]
        assert not set(space[held]) & set(space[train])
        assert not set(time[held]) & set(time[train])
    assert np.any(f.fold_of == -1)


def test_space_only_blocks_keep_groups_together():
    space = np.repeat(np.arange(6), 5)
    f = spacetime_folds(spacevar=space, k=3, seed=0)
    for g in range(6):
        assert np.unique(f.fold_of[space == g]).size == 1
    assert np.all(f.fold_of >= 0)
    with pytest.raises(ValueError, match="fewer than k"):
        spacetime_folds(timevar=np.arange(2), k=3)


def test_cv_distances_against_double_loop():
    pts = clustered_points(60, 4, seed=2)
    f = random_kfold(60, 4, 0)
    d = cv_distances(pts, f)
    for fold in range(4):
        held = f.test_indices(fold)
        _, bd = brute_nn(pts.coords[held], pts.coords[f.index_train[fold]])
        np.testing.assert_allclose(d[held], bd, atol=1e-12)


# -- NNDM ----------------------------------------------------------------------


def test_nndm_distant_prediction_excludes_to_the_cap():
    # all prediction distances exceed every CV distance, so each iteration drops
    # neighbours until half the rows are left: i plus its two nearest.
    # Row 2 (x=3) is equidistant from rows 0 and 3; the lower index goes first.
    coords = np.array([[0, 0], [1, 0], [3, 0], [6, 0], [10, 0], [15, 0]], dtype=float)
    pred = np.array([[0.0, 1000.0]])
    ex = nndm(PointSet(coords, "projected"), pred)
    assert [e.tolist() for e in ex.exclude] == [[0, 1, 2], [0, 1, 2], [0, 1, 2], [2, 3, 4], [3, 4, 5], [3, 4, 5]]
    assert ex.W < ex.W_loo


def test_nndm_prediction_at_samples_is_plain_loo():
    pts = clustered_points(40, 3, seed=4)
    ex = nndm(pts, pts)
    assert all(e.size == 1 for e in ex.exclude)
    assert ex.W == ex.W_loo


@pytest.mark.parametrize("seed", range(4))
def test_nndm_reported_w_matches_exclusions(seed):
    pts = clustered_points(80, 5, seed)
    pred = np.random.default_rng(seed).uniform(0, 100, (300, 2))
    ex = nndm(pts, pred)
    gpred = ecdf_of(nnd_between(pred, pts))
    assert wasserstein1(ecdf_of(cv_distances(pts, ex)), gpred) == pytest.approx(ex.W, rel=1e-12)
    assert ex.W <= ex.W_loo
    assert min(80 - e.size for e in ex.exclude) >= 40


def test_nndm_train_fraction_cap_respected():
    pts = clustered_points(50, 3, seed=9)
    ex = nndm(pts, np.array([[500.0, 500.0]]), min_train_fraction=0.8)
    assert min(50 - e.size for e in ex.exclude) >= 40


# -- kNNDM ---------------------------------------------------------------------


def test_merge_clusters_balances_greedily():
    labels = np.array([0] * 5 + [1] * 3 + [2] * 3 + [3] * 2 + [4])
    fold = merge_clusters(labels, 2)
    assert np.bincount(fold).tolist() == [7, 7]
    assert np.unique(fold[labels == 0]).size == 1


@pytest.mark.parametrize("seed", range(3))
def test_knndm_is_no_worse_than_random(seed):
    pts = clustered_points(90, 5, seed)
    pred = np.random.default_rng(seed + 100).uniform(0, 100, (400, 2))
    f = knndm(pts, pred, k=5, seed=seed)
    assert f.k == 5 and np.all(np.bincount(f.fold_of) > 0)
    gpred = ecdf_of(nnd_between(pred, pts))
    w_random = wasserstein1(ecdf_of(cv_distances(pts, random_kfold(90, 5, seed))), gpred)
    assert f.W == pytest.approx(wasserstein1(ecdf_of(cv_distances(pts, f)), gpred), rel=1e-12)
    assert f.W <= w_random
    assert f.info["W_random"] == pytest.approx(w_random, rel=1e-12)


def test_knndm_threads_do_not_change_result():
    pts = clustered_points(70, 4, 1)
    pred = np.random.default_rng(5).uniform(0, 100, (200, 2))
    a = knndm(pts, pred, 4, seed=3, threads=1)
    b = knndm(pts, pred, 4, seed=3, threads=4)
    np.testing.assert_array_equal(a.fold_of, b.fold_of)
    assert a.W == b.W


def test_knndm_geographic():
    rng = np.random.default_rng(0)
    pts = PointSet(np.column_stack([rng.uniform(5, 6, 40), rng.uniform(50, 51, 40)]), "geographic")
    pred = PointSet(np.column_stack([rng.uniform(4, 7, 100), rng.uniform(49, 52, 100)]), "geographic")
    f = knndm(pts, pred, 3, seed=0)
    assert f.W <= f.info["W_random"]
