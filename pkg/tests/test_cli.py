import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from spatialmap.cli import main
from spatialmap.raster import read_grid, read_stack


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    assert code == 0, out.err
    doc = json.loads(out.out)
    assert doc["schema_version"] == 1
    return doc


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "scenario.json").write_text(json.dumps({"size": 30, "n_samples": 60, "n_clusters": 4,
                                                "cluster_radius": 4, "n_noise": 2}))
    assert main(["synth", "--scenario", str(d / "scenario.json"), "--out", str(d), "--seed", "1"]) == 0
    return d


def test_synth_outputs(workdir):
    stack = read_stack(workdir / "raster" / "manifest.json")
    assert stack.names == ["inf1", "inf2", "inf3", "noise1", "noise2"]
    assert json.loads((workdir / "scenario.json").read_text())["seed"] == 1
    with open(workdir / "training.csv") as fh:
        assert next(csv.reader(fh))[:2] == ["x", "y"]


def test_folds_and_geodist(workdir, capsys):
    base = ["--train", workdir / "training.csv", "--raster", workdir / "raster" / "manifest.json",
            "--sample-size", 300]
    doc = run(capsys, "folds", "knndm", *base, "-k", 4, "--out", workdir / "kn")
    assert doc["k"] == 4 and sum(doc["fold_sizes"]) == 60
    r = run(capsys, "folds", "random", *base, "-k", 4, "--out", workdir / "rnd")
    assert doc["W"] <= r["W"] or r["W"] is None
    n = run(capsys, "folds", "nndm", *base, "--out", workdir / "nn")
    assert n["exclusion_sizes"]["max"] <= 30
    g = run(capsys, "geodist", *base, "--folds", workdir / "kn" / "folds.json", "--stat", "ecdf",
            "--out", workdir / "gd")
    assert set(g["summary"]["groups"]) == {"sample-to-sample", "prediction-to-sample", "CV-distances"}
    assert (workdir / "gd" / "geodist_ecdf.svg").exists()
    g = run(capsys, "geodist", *base, "--space", "feature", "--out", workdir / "gdf")
    assert g["summary"]["space"] == "feature"


def test_spacetime_folds_from_column(tmp_path, capsys):
    rows = ["x,y,block,t,a,response"] + [f"{i},{i % 7},{'pqrs'[i % 4]},{i % 3},{i * 0.1},{i}" for i in range(24)]
    (tmp_path / "t.csv").write_text("\n".join(rows) + "\n")
    doc = run(capsys, "folds", "spacetime", "--train", tmp_path / "t.csv", "--spacevar", "block", "-k", 2,
              "--out", tmp_path)
    assert doc["k"] == 2 and doc["W"] is None
    doc = run(capsys, "folds", "spacetime", "--train", tmp_path / "t.csv", "--spacevar", "block",
              "--timevar", "t", "-k", 2, "--out", tmp_path / "st")
    assert sum(doc["fold_sizes"]) < 24


def test_train_predict_aoa_errorprofile_render(workdir, capsys):
    folds = workdir / "kn" / "folds.json"
    if not folds.exists():
        pytest.skip("needs the folds test")
    out = workdir / "tr"
    t = run(capsys, "train", "--train", workdir / "training.csv", "--folds", folds, "--ffs",
            "--num-trees", 10, "--out", out)
    assert len(t["selected"]) >= 2 and [row["best"] for row in t["tuning"]].count(True) == 1
    for f in ("model.json", "cv_predictions.csv", "ffs_log.csv", "ffs.svg"):
        assert (out / f).exists()
    a = run(capsys, "aoa", "--model", out / "model.json", "--train", workdir / "training.csv", "--folds", folds,
            "--raster", workdir / "raster" / "manifest.json", "--lpd", "--out", out)
    assert 0 < a["fraction_inside"] <= 1
    p = run(capsys, "predict", "--model", out / "model.json", "--raster", workdir / "raster" / "manifest.json",
            "--mask", out / "aoa" / "AOA.asc", "--out", out)
    masked = read_grid(out / "prediction_aoa.asc").band("prediction_aoa")
    inside = read_grid(out / "aoa" / "AOA.asc").band("AOA") == 1
    np.testing.assert_array_equal(np.isfinite(masked), inside)
    assert p["cells_in_aoa"] == inside.sum()
    e = run(capsys, "errorprofile", "--model", out / "model.json", "--train", workdir / "training.csv",
            "--aoa", out / "aoa", "--window", 5, "--out", out)
    assert e["window"] == 5
    m = run(capsys, "errorprofile", "--model", out / "model.json", "--train", workdir / "training.csv",
            "--aoa", out / "aoa", "--multicv", "--out", out / "mc")
    assert m["cv_metrics"]["n"] == 60 * len(m["cluster_counts"])
    assert (out / "mc" / "aoa_updated" / "traindi.json").exists()
    r = run(capsys, "render", "--grid", out / "expected_error.asc", "--mask", out / "aoa" / "AOA.asc", "--out", out)
    assert (out / r["file"]).read_text().count("<rect") > 1


def test_knn_and_fixed_mtry(workdir, capsys):
    folds = workdir / "rnd" / "folds.json"
    if not folds.exists():
        pytest.skip("needs the folds test")
    k = run(capsys, "train", "--train", workdir / "training.csv", "--folds", folds, "--model", "knn",
            "--out", workdir / "knn")
    assert "tuning" not in k and k["model"] == "knn"
    r = run(capsys, "train", "--train", workdir / "training.csv", "--folds", folds, "--mtry", 2,
            "--num-trees", 5, "--out", workdir / "m2")
    assert json.loads((workdir / "m2" / "model.json").read_text())["params"]["mtry"] == 2
    assert r["metrics"]["n"] == 60


def test_errors_go_to_stderr(tmp_path, capsys):
    assert main(["predict", "--model", str(tmp_path / "missing.json"), "--raster", "x", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr()
    assert err.out == "" and "error:" in err.err
    with pytest.raises(SystemExit) as exc:
        main(["folds", "bogus"])
    assert exc.value.code == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "spatialmap", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "0.1.0"


def test_train_reports_every_fold_file(workdir, capsys):
    rnd, kn = workdir / "rnd" / "folds.json", workdir / "kn" / "folds.json"
    if not (rnd.exists() and kn.exists()):
        pytest.skip("needs the folds test")
    doc = run(capsys, "train", "--train", workdir / "training.csv", "--folds", rnd, kn, "--num-trees", 10,
              "--out", workdir / "both")
    blocks = doc["cv_by_folds"]
    assert [b["folds"] for b in blocks] == ["random", "knndm"]
    assert blocks[0]["metrics"] == doc["metrics"]
    # same model under spatial folds looks worse on clustered samples
    assert blocks[1]["metrics"]["RMSE"] > blocks[0]["metrics"]["RMSE"]
