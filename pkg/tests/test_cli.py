import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from agropanel.cli import main
from agropanel.core import Grid, read_ascii_grid, write_ascii_grid
from agropanel.thermal import read_bins_csv

CONFIG = {"n_units": 20, "n_years": 4, "grid_rows": 10, "grid_cols": 10, "n_stations": 6, "step_minutes": 180}


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def sim(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    (d / "cfg.json").write_text(json.dumps(CONFIG))
    assert run("simulate", "--config", d / "cfg.json", "--seed", 5, "--out-dir", d / "data") == 0
    return d


@pytest.fixture(scope="module")
def fitted(sim):
    data = sim / "data"
    assert run("bins", "--tmax", data / "A_tmax.csv", "--tmin", data / "A_tmin.csv", "--step", 180,
               "--out", sim / "bins.csv") == 0
    assert run("regress", "--panel", data / "panel.csv", "--bins", sim / "bins.csv", "--poly", "ppt:2",
               "--fe", "unit_id,year", "--se", "hc1", "--out", sim / "fit.json") == 0
    return sim


def test_help_and_version():
    out = subprocess.run([sys.executable, "-m", "agropanel.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("interpolate", "zonal", "project", "bins", "degdays", "regress", "impact", "permtest", "moran",
                "sem", "speccurve", "simulate"):
        assert cmd in out.stdout
    assert run("--version") == 0


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run("frobnicate") == 2
    assert run("permtest", "--fit", "x.json", "--out", "y.json") == 2  # --seed is required
    bad = tmp_path / "p.csv"
    bad.write_text("unit_id,year,y\na,2000,1.0\na,2001,2.0\n")
    assert run("regress", "--panel", bad, "--regressors", "nope", "--out", tmp_path / "f.json") == 2
    assert "invalid input" in capsys.readouterr().err


def test_missing_file_exits_1(tmp_path):
    assert run("regress", "--panel", tmp_path / "absent.csv", "--regressors", "x", "--out", tmp_path / "f.json") == 1


def test_simulate_outputs(sim):
    data = sim / "data"
    for name in ("panel.csv", "weather.csv", "bins_truth.csv", "centroids.csv", "admin.csv", "stations.csv",
                 "weights.asc", "A_tmax.csv", "A_tmin.csv", "truth.json", "dgp.json", "simulate.manifest.json",
                 "stack/tmax_stack.csv"):
        assert (data / name).exists(), name
    manifest = json.loads((data / "simulate.manifest.json").read_text())
    assert manifest["seed"] == 5 and manifest["command"][:2] == ["agropanel", "simulate"]
    assert "wall_time_s" in manifest and manifest["version"]


def test_same_seed_gives_identical_artifacts(sim, tmp_path):
    assert run("simulate", "--config", sim / "cfg.json", "--seed", 5, "--out-dir", tmp_path) == 0
    for f in (sim / "data").rglob("*"):
        if f.is_file() and not f.name.endswith("manifest.json"):
            assert f.read_bytes() == (tmp_path / f.relative_to(sim / "data")).read_bytes(), f.name


def test_bins_match_simulated_exposure(fitted):
    ours, grid = read_bins_csv(fitted / "bins.csv")
    truth, _ = read_bins_csv(fitted / "data" / "bins_truth.csv")
    cols = [c for c in truth.columns if c.startswith("z")]
    ours = ours.sort_values(["unit_id", "year"]).reset_index(drop=True)
    truth = truth.sort_values(["unit_id", "year"]).reset_index(drop=True)
    assert np.allclose(ours[cols], truth[cols], rtol=0, atol=1e-9)
    assert (fitted / "bins.csv.manifest.json").exists()


def test_regression_chain(fitted, tmp_path):
    fit = json.loads((fitted / "fit.json").read_text())
    assert len(fit["curve"]["beta"]) == 39 and fit["model"]["basis"] == "ncs"
    assert run("impact", "--fit", fitted / "fit.json", "--out", tmp_path / "imp.json") == 0
    imp = json.loads((tmp_path / "imp.json").read_text())
    assert np.isfinite(imp["impact"]) and imp["se"] > 0
    assert run("degdays", "--bins", fitted / "bins.csv", "--from", 29, "--out", tmp_path / "dd.csv") == 0
    dd = pd.read_csv(tmp_path / "dd.csv")
    assert (dd.iloc[:, -1] >= 0).all() and len(dd) == 80


def test_permtest_threads_do_not_change_result(fitted, tmp_path):
    args = ["permtest", "--fit", fitted / "fit.json", "--B", 12, "--seed", 3, "--stat", "warming:2"]
    assert run(*args, "--threads", 1, "--out", tmp_path / "a.json") == 0
    assert run(*args, "--threads", 3, "--out", tmp_path / "b.json") == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    res = json.loads((tmp_path / "a.json").read_text())
    assert 1 / 13 <= res["p"] <= 1 and len(res["null_draws"]) == 12


def test_spatial_diagnostics(fitted, tmp_path):
    cent = fitted / "data" / "centroids.csv"
    assert run("moran", "--fit", fitted / "fit.json", "--centroids", cent, "--perm", 49, "--seed", 1,
               "--out", tmp_path / "m.json") == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert -1 <= m["I"] <= 1 and 0 < m["p"] <= 1
    assert run("sem", "--fit", fitted / "fit.json", "--centroids", cent, "--wk", "knn:4",
               "--out", tmp_path / "s.json") == 0
    assert "lambda" in json.loads((tmp_path / "s.json").read_text())


def test_speccurve_command(sim, tmp_path):
    data = sim / "data"
    svg, csv = tmp_path / "chart.svg", tmp_path / "chart.csv"
    assert run("speccurve", "--panel", data / "panel.csv", "--weather", data / "weather.csv", "--se", "hc1",
               "--out-svg", svg, "--out-csv", csv) == 0
    assert svg.read_text().startswith("<svg")
    table = pd.read_csv(csv)
    assert len(table) == 72 and table["baseline"].sum() == 1
    assert table["adj_r2"].is_monotonic_increasing
    manifest = json.loads((tmp_path / "chart.csv.manifest.json").read_text())
    assert sorted(manifest["outputs"]) == sorted([str(svg), str(csv)])


def test_interpolate_project_zonal(sim, tmp_path):
    data = sim / "data"
    date = pd.read_csv(data / "stack" / "tmax_stack.csv")["label"].iloc[0]
    assert run("interpolate", "--stations", data / "stations.csv", "--grid", data / "weights.asc", "--var", "tmax",
               "--date", date, "--method", "knn_idw", "--k", 4, "--out", tmp_path / "g.asc") == 0
    g = read_ascii_grid(tmp_path / "g.asc")
    assert g.values.shape == (100,) and np.isfinite(g.values).all()
    assert run("project", "--stack", data / "stack" / "tmax_stack.csv", "--weights", data / "admin.csv",
               "--out", tmp_path / "a.csv") == 0
    a = pd.read_csv(tmp_path / "a.csv")
    assert list(a.columns) == ["unit_id", "label", "value"] and a["unit_id"].nunique() == 20

    fine = Grid(4, 4, 0, 0, 0.5, -9999, [1, 1, 2, 2] * 4)
    coarse = Grid(2, 2, 0, 0, 1.0, -9999, np.zeros(4))
    write_ascii_grid(fine, tmp_path / "fine.asc")
    write_ascii_grid(coarse, tmp_path / "coarse.asc")
    assert run("zonal", "--fine", tmp_path / "fine.asc", "--coarse", tmp_path / "coarse.asc", "--class", 1,
               "--out", tmp_path / "frac.asc") == 0
    assert read_ascii_grid(tmp_path / "frac.asc").values.tolist() == [1.0, 0.0, 1.0, 0.0]
