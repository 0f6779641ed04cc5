import re

import pytest

from agropanel.core import PanelTable
from agropanel.exceptions import ValidationError
from agropanel.regress import fit_within, warming_impact
from agropanel.speccurve import (
    Descriptor, SpecGrid, SpecResult, baseline_count, read_results_csv, render_chart, render_svg, run_grid,
    sort_results, spec_for, write_results_csv,
)
from agropanel.synth import DGPConfig, generate


@pytest.fixture(scope="module")
def data():
    return generate(DGPConfig(seed=4, n_units=40, n_years=8, step_minutes=180, response="tmax"))


@pytest.fixture(scope="module")
def results(data):
    return run_grid(data.panel, se="hc1")


def test_full_grid_has_72_results(results):
    assert len(SpecGrid()) == 72
    assert len(results) == 72 and all(r.ok for r in results)
    assert sorted(r.rank for r in results) == list(range(1, 73))
    assert len({r.descriptor for r in results}) == 72


def test_sorted_nondecreasing_adjusted_r2(results):
    adj = [r.adj_r2 for r in results]
    assert all(a <= b for a, b in zip(adj, adj[1:]))


def test_baseline_flagged_once(results):
    assert baseline_count(results) == 1
    base = next(r for r in results if r.baseline)
    assert base.descriptor == Descriptor("tmean", True, "quadratic", "mar_aug", "pooled")


def test_duplicate_axis_values_collapse():
    grid = SpecGrid(seasons=("apr_sep", "apr_sep"), baseline="tmean,precip,quadratic,apr_sep,pooled")
    assert len(grid) == 24


def test_baseline_must_be_in_grid():
    with pytest.raises(ValidationError, match="not in the grid"):
        SpecGrid(temperatures=("tmax",))
    with pytest.raises(ValidationError):
        Descriptor.parse("tmean,precip,linear,apr_sep,pooled")


def test_missing_weather_column(data):
    panel = data.panel.frame.drop(columns=["tmin_annual"])
    with pytest.raises(ValidationError, match="tmin_annual"):
        run_grid(PanelTable(panel))


def test_single_result_matches_direct_fit(data, results):
    d = Descriptor("tmin", False, "cubic", "annual", "by_state")
    spec = spec_for(d)
    fit = fit_within(data.panel, spec, se="hc1")
    imp = warming_impact(fit, spec, 2.0)
    r = next(r for r in results if r.descriptor == d)
    assert r.impact == pytest.approx(imp.impact, rel=1e-10)
    assert r.se == pytest.approx(imp.se, rel=1e-10)
    assert r.adj_r2 == pytest.approx(fit.adj_r2, rel=1e-12)
    assert spec.design_names[:3] == ["tmin_annual", "tmin_annual^2", "tmin_annual^3"]


def test_csv_round_trip(results, tmp_path):
    write_results_csv(results, tmp_path / "r.csv")
    assert read_results_csv(tmp_path / "r.csv") == results


def test_outputs_are_byte_deterministic(data, tmp_path):
    paths = []
    for k in range(2):
        res = run_grid(data.panel, se="hc1", threads=1 + 2 * k)
        svg, csv = tmp_path / f"c{k}.svg", tmp_path / f"c{k}.csv"
        render_chart(res, out_svg=svg, out_csv=csv)
        paths.append((svg.read_bytes(), csv.read_bytes()))
    assert paths[0] == paths[1]


def test_svg_is_self_contained(results):
    svg = render_svg(results)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
    assert "href" not in svg and "<image" not in svg
    assert svg.count('fill="#c8102e"') >= 1
    assert svg.count("<line x1=") >= 72


def test_one_point_chart():
    r = SpecResult("tmean", True, "quadratic", "mar_aug", "pooled", -0.1, 0.02, 0.5, 100, 1, True)
    svg = render_svg([r])
    assert len(re.findall(r'<circle cx="[\d.]+" cy="[\d.]+" r="3" fill="#c8102e"/>', svg)) == 1


def test_sort_by_estimate(results, tmp_path):
    ordered = render_chart(results, sort="estimate", out_csv=tmp_path / "e.csv")
    est = [r.impact for r in ordered]
    assert est == sorted(est)
    assert [r.impact for r in read_results_csv(tmp_path / "e.csv")] == est
    assert sort_results(results, "input_order") == results
    with pytest.raises(ValidationError):
        sort_results(results, "mse")


@pytest.mark.slow
def test_best_fit_uses_tmax_when_outcome_depends_on_tmax():
    wins = 0
    for seed in range(100):
        d = generate(DGPConfig(seed=seed, n_units=40, n_years=8, step_minutes=180, response="tmax"))
        wins += run_grid(d.panel)[-1].temperature == "tmax"
    assert wins >= 95
