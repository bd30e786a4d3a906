import csv
import json

import pytest

from ritzlab import __version__
from ritzlab.cli import main
from ritzlab.harness import COLUMNS, TRAILER
from ritzlab.spectral import CosineSeries


def write(path, data):
    path.write_text(json.dumps(data))
    return path


@pytest.fixture
def poisson_file(tmp_path):
    f = CosineSeries(2, {(1, 0): 1.0, (1, 2): -0.5})
    return write(tmp_path / "poisson.json", {"kind": "poisson", "f": f.to_dict()})


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


@pytest.mark.parametrize("argv", [[], ["frobnicate", "--config", "x"], ["solve-exact"],
                                  ["solve-exact", "--config", "x", "--bogus"],
                                  ["solve-exact", "--config", "x", "--threads", "0"],
                                  ["solve-exact", "--config", "x", "--seed", "-1"]])
def test_usage_errors(argv, capsys):
    assert main(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_and_malformed_config(tmp_path, capsys):
    assert main(["solve-exact", "--config", str(tmp_path / "nope.json")]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("kind = ")
    assert main(["regularity", "--config", str(bad)]) == 2
    assert "bad.toml" in capsys.readouterr().err


def test_bad_thread_env(poisson_file, tmp_path, monkeypatch):
    monkeypatch.setenv("RITZ_LAB_THREADS", "many")
    assert main(["solve-exact", "--config", str(poisson_file), "--out", str(tmp_path)]) == 2


def test_solve_exact(poisson_file, tmp_path):
    out = tmp_path / "sol"
    assert main(["solve-exact", "--config", str(poisson_file), "--out", str(out), "--quiet"]) == 0
    u = CosineSeries.from_json((out / "solution.json").read_text())
    assert len(u) == 2
    assert json.loads((out / "report.json").read_text())["residual"] <= 1e-12


def test_solve_exact_schrodinger(tmp_path):
    prob = {"kind": "schrodinger", "f": CosineSeries.basis((1,)).to_dict(),
            "V": CosineSeries(1, {(0,): 2.0, (1,): 1.0}).to_dict(), "K": 16}
    out = tmp_path / "s"
    assert main(["solve-exact", "--config", str(write(tmp_path / "p.json", prob)),
                 "--out", str(out)]) == 0
    assert json.loads((out / "report.json").read_text())["residual"] <= 1e-10


def test_solve_exact_invalid_problem(tmp_path):
    assert main(["solve-exact", "--config", str(write(tmp_path / "p.json", {"kind": "heat"}))]) == 2


def test_approx_study_schema_and_seed_determinism(tmp_path):
    cfg = tmp_path / "a.toml"
    cfg.write_text('kind = "approximation"\ndims = [1]\nwidths = [8, 16, 32]\nseeds = [0, 1]\n'
                   'slope_band = [-2.0, 0.0]\n')
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["approx-study", "--config", str(cfg), "--out", str(out), "--seed", "7",
                     "--quiet"]) == 0
        outs.append(out)
    header = next(csv.reader((outs[0] / "rows.csv").open()))
    assert header[:10] == ["d", "m", "m1", "m2", "activation", "tau", "seed", "h1_error",
                           "barron_norm", "bound_thm"]
    assert header == COLUMNS["approximation"] + TRAILER
    for name in ("rows.csv", "result.json"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    assert json.loads((outs[0] / "result.json").read_text())["config"]["master_seed"] == 7


def test_study_kind_mismatch(tmp_path):
    cfg = write(tmp_path / "c.json", {"kind": "regularity"})
    assert main(["approx-study", "--config", str(cfg)]) == 2


def test_criteria_failure_exit_code(tmp_path):
    cfg = write(tmp_path / "c.json", {"kind": "approximation", "dims": [1],
                                      "widths": [8, 16, 32], "slope_band": [5.0, 6.0]})
    assert main(["approx-study", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--quiet"]) == 3


def test_regularity_single_source(tmp_path):
    f = CosineSeries(1, {(1,): 1.0})
    cfg = write(tmp_path / "r.json", {"f": f.to_dict(), "s": 0})
    assert main(["regularity", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"]) == 0
    rep = json.loads((tmp_path / "o" / "regularity.json").read_text())
    assert rep["checks"]["ratio_le_d"]


def test_regularity_study_with_out_dir_alias(tmp_path):
    cfg = write(tmp_path / "r.json", {"kind": "regularity", "dims": [1, 2], "smoothness": [0]})
    assert main(["regularity", "--config", str(cfg), "--out-dir", str(tmp_path / "o"),
                 "--quiet"]) == 0
    assert (tmp_path / "o" / "rows.csv").exists()


@pytest.mark.parametrize("data", [{"B": 1.0, "m": 64, "d": 2, "n": 4096, "F": 1.0, "V_max": 1.0},
                                  {"C": 2.0, "Gamma": 4.0, "W": 1.0, "T": 1.0, "m": 8, "d": 2,
                                   "n": 100, "activation": "relu"}])
def test_complexity_bounds(data, tmp_path):
    out = tmp_path / "o"
    assert main(["complexity-bounds", "--config", str(write(tmp_path / "c.json", data)),
                 "--out", str(out), "--quiet"]) == 0
    bounds = json.loads((out / "bounds.json").read_text())
    assert "network" in bounds
    if "F" in data:
        assert bounds["loss_classes"]["values"]["poisson"] == pytest.approx(19.2254321340327)


def test_complexity_bounds_invalid(tmp_path):
    cfg = write(tmp_path / "c.json", {"m": 8, "d": 2})
    assert main(["complexity-bounds", "--config", str(cfg)]) == 2


def test_rademacher_study(tmp_path):
    cfg = write(tmp_path / "c.json", {"kind": "complexity", "dims": [1], "widths": [4],
                                      "samples": [32], "budgets": [1.0], "draws": 2, "steps": 5})
    assert main(["rademacher", "--config", str(cfg), "--out", str(tmp_path / "o"),
                 "--quiet"]) == 0
    assert json.loads((tmp_path / "o" / "result.json").read_text())["flags"]["mc_dominated"]


def test_train_drm_single_run(tmp_path):
    sol = CosineSeries(1, {(1,): 0.1})
    cfg = write(tmp_path / "t.json", {"solution": sol.to_dict(), "m": 4, "n": 128,
                                      "iterations": 10, "optimizer": "adam", "lr": 0.01,
                                      "log_every": 5})
    out = tmp_path / "o"
    assert main(["train-drm", "--config", str(cfg), "--out", str(out), "--seed", "3",
                 "--quiet"]) == 0
    assert {p.name for p in out.iterdir()} == {"net.json", "training_log.csv", "report.json"}
    assert "relative_h1" in json.loads((out / "report.json").read_text())
    first = (out / "net.json").read_bytes()
    assert main(["train-drm", "--config", str(cfg), "--out", str(out), "--seed", "3",
                 "--quiet"]) == 0
    assert (out / "net.json").read_bytes() == first


def test_train_drm_divergence(tmp_path):
    sol = CosineSeries(1, {(1,): 1e3})
    cfg = write(tmp_path / "t.json", {"solution": sol.to_dict(), "m": 4, "n": 64,
                                      "iterations": 200, "optimizer": "sgd", "lr": 1e4})
    out = tmp_path / "o"
    assert main(["train-drm", "--config", str(cfg), "--out", str(out), "--quiet"]) == 3
    assert json.loads((out / "report.json").read_text())["diverged"]


def test_train_drm_config_errors(tmp_path):
    cfg = write(tmp_path / "t.json", {"m": 4})
    assert main(["train-drm", "--config", str(cfg)]) == 2
    sol = CosineSeries(1, {(1,): 0.1}).to_dict()
    cfg = write(tmp_path / "u.json", {"solution": sol, "widths": 4})
    assert main(["train-drm", "--config", str(cfg)]) == 2


def test_train_drm_generalization_study(tmp_path):
    cfg = write(tmp_path / "g.json", {"kind": "generalization", "dims": [1],
                                      "samples": [64, 128, 256], "iterations": 5,
                                      "max_slope": 10.0})
    code = main(["train-drm", "--config", str(cfg), "--out", str(tmp_path / "o"), "--quiet"])
    result = json.loads((tmp_path / "o" / "result.json").read_text())
    assert code == (0 if result["ok"] else 3)
    assert len(result["rows"]) == 3
