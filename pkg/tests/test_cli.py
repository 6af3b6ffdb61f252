import json

import numpy as np
import pytest

from covmc.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, main, read_config
from covmc.data import write_covariates, write_triplets
from covmc.io import load_model
from covmc.simulate import DgpConfig, gen_dgp


@pytest.fixture
def data_dir(tmp_path):
    d = gen_dgp(DgpConfig(n=80, m=60, kind="dgp2", C=2.0, seed=2))
    write_triplets(tmp_path / "y.csv", d.Y)
    write_covariates(tmp_path / "x.csv", d.X)
    (tmp_path / "c.json").write_text(json.dumps({"group": "all", "A": [[1, 0, 0]], "a0": [0]}))
    return tmp_path


def _run(*args):
    return main([str(a) for a in args])


def test_fit_infer_test_pipeline(data_dir):
    p = data_dir
    assert _run("fit", "--y", p / "y.csv", "--x", p / "x.csv", "--rank", 3, "--out", p / "m.json") == EXIT_OK
    state, _, meta = load_model(p / "m.json")
    assert state.r == 3 and meta["method"] == "ls" and meta["trace"]["steps_taken"] == 3
    assert (p / "m.json.manifest.json").exists()
    assert _run("infer", "--model", p / "m.json", "--y", p / "y.csv", "--x", p / "x.csv",
                "--target", "gamma:1,2", "--out", p / "i.json") == EXIT_OK
    rep = json.loads((p / "i.json").read_text())
    assert rep["target"] == "gamma" and rep["ci_low"] < rep["estimate"] < rep["ci_high"]
    assert _run("test", "--model", p / "m.json", "--y", p / "y.csv", "--x", p / "x.csv",
                "--contrast", p / "c.json", "--B", 200, "--seed", 3, "--out", p / "t.json") == EXIT_OK
    res = json.loads((p / "t.json").read_text())
    assert res["B"] == 200 and 0 < res["p_value"] <= 1


def test_model_roundtrip_full_precision(data_dir):
    p = data_dir
    _run("fit", "--y", p / "y.csv", "--x", p / "x.csv", "--rank", 2, "--out", p / "m.json")
    s1, _, _ = load_model(p / "m.json")
    from covmc.io import save_model

    _, prop, meta = load_model(p / "m.json")
    save_model(p / "m2.json", s1, prop, None, meta["config"], meta["method"])
    s2, _, _ = load_model(p / "m2.json")
    assert np.array_equal(s1.L, s2.L) and np.array_equal(s1.beta, s2.beta)


def test_rank_auto_and_pca(data_dir):
    p = data_dir
    assert _run("rank", "--y", p / "y.csv", "--x", p / "x.csv", "--max-rank", 5, "--out", p / "r.json") == EXIT_OK
    rep = json.loads((p / "r.json").read_text())
    assert set(rep) >= {"candidates", "mse", "eic", "h", "r_hat"}
    assert _run("fit", "--y", p / "y.csv", "--x", p / "x.csv", "--rank", "auto", "--max-rank", 5,
                "--method", "pca", "--out", p / "m.json") == EXIT_OK
    _, _, meta = load_model(p / "m.json")
    assert meta["method"] == "pca" and meta["rank"] == rep["r_hat"]


def test_config_file_with_override(data_dir):
    p = data_dir
    (p / "fit.cfg").write_text("# fit settings\nrank = 2\nsteps = 4\nconverge = false\n")
    assert read_config(p / "fit.cfg") == {"rank": "2", "steps": "4", "converge": "false"}
    assert _run("fit", "--config", p / "fit.cfg", "--y", p / "y.csv", "--x", p / "x.csv",
                "--steps", 2, "--out", p / "m.json") == EXIT_OK
    _, _, meta = load_model(p / "m.json")
    assert meta["rank"] == 2 and meta["trace"]["steps_taken"] == 2
    (p / "bad.cfg").write_text("colour = blue\n")
    assert _run("fit", "--config", p / "bad.cfg", "--y", p / "y.csv", "--x", p / "x.csv",
                "--rank", 2, "--out", p / "m.json") == EXIT_DATA


def test_exit_codes(tmp_path, data_dir):
    p = data_dir
    assert _run("fit", "--y", p / "missing.csv", "--x", p / "x.csv", "--rank", 2, "--out", p / "m.json") == EXIT_DATA
    assert _run("fit", "--y", p / "y.csv", "--x", p / "x.csv", "--rank", 500, "--out", p / "m.json") == EXIT_DATA
    # covariates that separate observed from unobserved rows: the logistic MLE does not exist
    X = np.column_stack([np.r_[-np.ones(10), np.ones(10)], np.arange(20.0)])
    mask = np.zeros((20, 8))
    mask[10:] = 1
    write_covariates(tmp_path / "xs.csv", X)
    write_triplets(tmp_path / "ys.csv", [(i, j, 1.0) for i in range(20) for j in range(8) if mask[i, j]])
    assert _run("fit", "--y", tmp_path / "ys.csv", "--x", tmp_path / "xs.csv", "--n", 20, "--rank", 1,
                "--out", tmp_path / "m.json") == EXIT_NUMERICAL


def test_reruns_are_byte_identical(data_dir, tmp_path):
    p = data_dir
    outs = []
    for k in range(2):
        o = tmp_path / f"run{k}"
        o.mkdir()
        _run("fit", "--y", p / "y.csv", "--x", p / "x.csv", "--rank", 3, "--converge", "--out", o / "m.json")
        _run("test", "--model", o / "m.json", "--y", p / "y.csv", "--x", p / "x.csv",
             "--contrast", p / "c.json", "--B", 150, "--seed", 1, "--samples", "--out", o / "t.json")
        _run("simulate", "--experiment", "coverage", "--dgp", 2, "--n", 40, "--m", 40, "--reps", 2, "--out-dir", o / "sim")
        outs.append([(o / f).read_bytes() for f in ("m.json", "t.json", "sim/coverage.csv", "sim/coverage.json")])
    assert outs[0] == outs[1]


def test_ingest_and_eval(tmp_path):
    rng = np.random.default_rng(0)
    ages = ["0-24", "25-34", "35-49", "50+"]
    (tmp_path / "users.csv").write_text("user,gender,age_group\n" + "".join(
        f"{u},{'FM'[(u // 4) % 2]},{ages[u % 4]}\n" for u in range(80)))
    lines = ["user,item,rating"]
    for u in range(80):
        for it in rng.choice(30, 28, replace=False):
            lines.append(f"{u},{it},{rng.integers(1, 11) / 2}")
    (tmp_path / "ratings.csv").write_text("\n".join(lines) + "\n")
    out = tmp_path / "ing"
    assert _run("ingest", "--ratings", tmp_path / "ratings.csv", "--users", tmp_path / "users.csv",
                "--out-dir", out) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["test"] == 800 and summary["d"] == 5
    assert _run("fit", "--y", out / "train.csv", "--x", out / "covariates.csv", "--n", 80, "--m", 30,
                "--rank", 2, "--out", out / "m.json") == EXIT_OK
    assert _run("eval", "--model", out / "m.json", "--train", out / "train.csv", "--test", out / "test.csv",
                "--x", out / "covariates.csv", "--out", out / "e.json") == EXIT_OK
    rep = json.loads((out / "e.json").read_text())
    assert 0 <= rep["rmse_adjusted_test"] <= 4.5 and rep["r_hat_used"] == 2
    (tmp_path / "bad_users.csv").write_text("user,gender,age_group\n0,F,teen\n")
    assert _run("ingest", "--ratings", tmp_path / "ratings.csv", "--users", tmp_path / "bad_users.csv",
                "--out-dir", tmp_path / "x") == EXIT_DATA
