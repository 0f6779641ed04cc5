"""Command line interface: ``agropanel <subcommand> ...``.

Exit codes: 0 on success, 2 on invalid input or usage, 1 on I/O and other
runtime failures.  Every command writes ``<output>.manifest.json`` next
to its main output.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .aggregate import ProjectionMatrix, build_projection, project_to_frame, zonal_fractions
from .basis import make_basis
from .core import (
    GridStack, PanelTable, read_admin_csv, read_ascii_grid, read_grid_stack, read_panel_csv, read_stations_csv,
    write_admin_csv, write_ascii_grid, write_grid_stack, write_panel_csv, write_stations_csv,
)
from .covariance import SEConfig
from .exceptions import AgropanelError, ConfigurationError, ValidationError
from .interpolate import (
    InterpSpec, anomaly_infuse_temperature, interpolate_to_grid, ratio_infuse_precipitation,
)
from .permutation import permutation_test
from .regress import ModelSpec, fit_within, warming_impact
from .spatial import SpatialWeights, panel_morans_i, sem_ml
from .speccurve import Descriptor, SpecGrid, render_chart, run_grid
from .synth import DGPConfig, generate
from .thermal import BinGrid, SineConfig, bin_columns, degree_days_from_bins, exposure_table, parse_season
from .thermal import read_bins_csv, write_bins_csv

log = logging.getLogger("agropanel")

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out, args, inputs, started, seed=None, outputs=None):
    manifest = {
        "command": ["agropanel", *args.argv],
        "inputs": {str(p): _sha256(p) for p in inputs if p and Path(p).is_file()},
        "outputs": [str(o) for o in (outputs or [out])],
        "seed": seed,
        "version": __version__,
        "wall_time_s": round(time.perf_counter() - started, 6),
    }
    with open(f"{out}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return max(1, int(args.threads))
    env = os.environ.get("AGROPANEL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ValidationError(f"AGROPANEL_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def _split(text):
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _read_centroids(path):
    frame = pd.read_csv(path, dtype={"unit_id": str}, float_precision="round_trip")
    missing = {"unit_id", "lat", "lon"} - set(frame.columns)
    if missing:
        raise ValidationError(f"{path}: centroid file lacks column(s) {', '.join(sorted(missing))}")
    return frame


def _read_unit_series(path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"unit_id": str, "label": str}, float_precision="round_trip")
    if list(frame.columns) != ["unit_id", "label", "value"]:
        raise ValidationError(f"{path}: header must be unit_id,label,value")
    return frame


# ---------------------------------------------------------------------------
# data preparation commands


_METHOD_ALIASES = {"nearest": "nearest", "knn": "knn_idw", "knn_idw": "knn_idw", "radius": "radius_idw",
                   "radius_idw": "radius_idw"}


def cmd_interpolate(args):
    stations = read_stations_csv(args.stations)
    template = read_ascii_grid(args.template)
    spec = InterpSpec(_METHOD_ALIASES[args.method], args.k, args.radius, args.power)
    if args.date:
        dates = [args.date]
    else:
        sel = stations.frame[(stations.frame["variable"] == args.variable)
                             & stations.frame["date"].str.startswith(args.month)]
        dates = sorted(sel["date"].unique())
        if not dates:
            raise ValidationError(f"no {args.variable} observations in month {args.month}")
    grids = [interpolate_to_grid(stations, template.header, d, args.variable, spec) for d in dates]
    stack = GridStack(template.header, np.vstack([g.values for g in grids]), dates)
    inputs = [args.stations, args.template]
    if args.reference:
        ref = read_ascii_grid(args.reference)
        inputs.append(args.reference)
        if args.variable == "ppt":
            stack, dry = ratio_infuse_precipitation(stack, ref, return_flags=True)
            if dry.any():
                log.info("%d cells kept dry", int(dry.sum()))
        else:
            stack = anomaly_infuse_temperature(stack, ref)
    if args.date:
        write_ascii_grid(stack.layer(0), args.out)
    else:
        write_grid_stack(stack, args.out)
    return inputs, None


def cmd_zonal(args):
    fine = read_ascii_grid(args.fine)
    coarse = read_ascii_grid(args.coarse)
    write_ascii_grid(zonal_fractions(fine, coarse.header, args.class_code), args.out)
    return [args.fine, args.coarse], None


def _load_stack(path):
    if str(path).lower().endswith(".asc"):
        g = read_ascii_grid(path)
        return GridStack(g.header, g.values[None, :], [Path(path).stem])
    return read_grid_stack(path)


def cmd_project(args):
    stack = _load_stack(args.stack)
    units = read_admin_csv(args.units, n_cells=stack.header.size)
    inputs = [args.stack, args.units]
    if args.weight_grid:
        wg = read_ascii_grid(args.weight_grid)
        if not wg.header.same_geometry(stack.header):
            raise ValidationError(f"{args.weight_grid}: weight grid geometry differs from the stack")
        P = build_projection(units, wg)
        inputs.append(args.weight_grid)
    else:
        rows, cols, w = units.triplets()
        P = ProjectionMatrix.from_triplets(rows, cols, w, units.unit_ids, stack.header.size)
    frame = project_to_frame(P, stack)
    frame.to_csv(args.out, index=False, float_format=FLOAT_FMT)
    return inputs, None


def cmd_bins(args):
    tmax = _read_unit_series(args.tmax).rename(columns={"value": "tmax", "label": "date"})
    tmin = _read_unit_series(args.tmin).rename(columns={"value": "tmin", "label": "date"})
    daily = tmax.merge(tmin, on=["unit_id", "date"], how="outer")
    if daily[["tmin", "tmax"]].isna().any().any():
        row = daily[daily[["tmin", "tmax"]].isna().any(axis=1)].iloc[0]
        raise ValidationError(f"tmin and tmax files do not match: unit {row['unit_id']}, date {row['date']}")
    bins = BinGrid(args.lo, args.hi, args.width)
    table = exposure_table(daily, bins, parse_season(args.season), SineConfig(step_minutes=args.step))
    write_bins_csv(table, args.out, bins)
    return [args.tmax, args.tmin], None


def _bins_with_grid(path, lo=None, width=None):
    table, bins = read_bins_csv(path)
    if bins is None:
        if lo is None or width is None:
            raise ValidationError(f"{path}: no bin-grid sidecar; pass --lo and --width")
        K = len(table.columns) - 2
        bins = BinGrid(lo, lo + width * (K - 1), width)
    return table, bins


def cmd_degdays(args):
    table, bins = _bins_with_grid(args.bins, args.lo, args.width)
    Z = table[bin_columns(bins.K)].to_numpy()
    hi = math.inf if args.to is None else args.to
    out = table[["unit_id", "year"]].copy()
    out["dd"] = degree_days_from_bins(Z, bins, args.from_, hi)
    out.to_csv(args.out, index=False, float_format=FLOAT_FMT)
    return [args.bins], None


# ---------------------------------------------------------------------------
# models


def _parse_trend(text: str):
    """``none``, ``pooled-linear``, ``pooled-quadratic`` or ``<column>-linear|quadratic``."""
    if text == "none":
        return "none", "state"
    col, _, shape = text.rpartition("-")
    if shape not in ("linear", "quadratic") or not col:
        raise ValidationError(f"trend must be none, pooled-linear, pooled-quadratic or COLUMN-linear|quadratic; got {text!r}")
    if col == "pooled":
        return f"pooled_{shape}", "state"
    return f"by_region_{shape}", col


def _recipe_from_args(args) -> dict:
    return {
        "panel": str(Path(args.panel).resolve()),
        "bins": str(Path(args.bins).resolve()) if args.bins else None,
        "basis": args.basis or ("ncs" if args.bins else None), "df": args.df, "step_width": args.step_width, "degree": args.degree,
        "lo": args.lo, "width": args.width,
        "poly": args.poly, "regressors": args.regressors, "temperature": args.temperature,
        "fe": args.fe, "trend": args.trend, "se": args.se, "log_outcome": args.log_outcome,
        "weights": args.weights,
        "centroids": str(Path(args.centroids).resolve()) if args.centroids else None,
    }


def _model_from_recipe(r: dict):
    """Rebuild (panel, spec, centroids, bins) from a recorded recipe."""
    panel = read_panel_csv(r["panel"])
    basis = None
    zcols = ()
    bins = None
    if r.get("bins"):
        table, bins = _bins_with_grid(r["bins"], r.get("lo"), r.get("width"))
        zcols = tuple(bin_columns(bins.K))
        frame = panel.frame.drop(columns=[c for c in zcols if c in panel.frame.columns])
        merged = frame.merge(table, on=["unit_id", "year"], how="inner")
        dropped = len(frame) - len(merged)
        if dropped:
            log.warning("%d panel rows have no exposure bins and are dropped", dropped)
        panel = PanelTable(merged)
        kind = r.get("basis") or "ncs"
        if kind != "none":
            basis = make_basis(kind, bins, df=r.get("df"), step_width=r.get("step_width"), degree=r.get("degree"))
            basis = basis.drop_constant()
    elif r.get("basis") not in (None, "none"):
        raise ValidationError("--basis needs --bins")
    terms = []
    for item in _split(r.get("poly")):
        src, _, p = item.partition(":")
        power = int(p or 1)
        if power < 1:
            raise ValidationError(f"polynomial power must be >= 1 in {item!r}")
        terms += [(src if k == 1 else f"{src}^{k}", src, k) for k in range(1, power + 1)]
    temperature = r.get("temperature") or (terms[0][1] if terms else None)
    trend, region = _parse_trend(r.get("trend") or "none")
    spec = ModelSpec(
        regressors=tuple(_split(r.get("regressors"))), terms=tuple(terms),
        basis=basis, basis_columns=zcols if basis is not None else (),
        fixed_effects=tuple(_split(r.get("fe"))), trends=trend, region=region,
        weights=r.get("weights"), log_outcome=bool(r.get("log_outcome")), temperature=temperature,
    )
    centroids = _read_centroids(r["centroids"]) if r.get("centroids") else None
    return panel, spec, centroids, bins


def _load_fit_recipe(path):
    with open(path) as fh:
        doc = json.load(fh)
    if "model" not in doc:
        raise ValidationError(f"{path}: not a fit file (no model recipe)")
    return doc


def _recipe_inputs(r):
    return [p for p in (r.get("panel"), r.get("bins"), r.get("centroids")) if p]


def cmd_regress(args):
    recipe = _recipe_from_args(args)
    panel, spec, centroids, bins = _model_from_recipe(recipe)
    fit = fit_within(panel, spec, se=args.se, centroids=centroids)
    doc = fit.to_dict()
    doc["model"] = recipe
    doc["diagnostics"] = {"orthogonality": fit.orthogonality(), "sweeps": fit.sweeps, "n_absorbed": fit.n_absorbed}
    if spec.basis is not None:
        curve = fit.curve(spec)
        lo, hi = curve.ci()
        doc["curve"] = {
            "bin_midpoints": bins.midpoints.tolist(), "beta": curve.beta.tolist(), "se": curve.se.tolist(),
            "ci_lower": lo.tolist(), "ci_upper": hi.tolist(),
        }
    doc["residuals"] = {
        "unit_id": fit.frame["unit_id"].tolist(), "year": fit.frame["year"].astype(int).tolist(),
        "value": fit.residuals.tolist(),
    }
    _write_json(doc, args.out)
    return [args.panel, args.bins, args.centroids], None


def cmd_impact(args):
    doc = _load_fit_recipe(args.fit)
    panel, spec, centroids, _ = _model_from_recipe(doc["model"])
    fit = fit_within(panel, spec, se=doc["model"]["se"], centroids=centroids)
    imp = warming_impact(fit, spec, args.delta)
    _write_json({"delta": imp.delta, "impact": imp.impact, "se": imp.se, "n_obs": imp.n_obs,
                 "se_type": fit.se_type}, args.out)
    return [args.fit, *_recipe_inputs(doc["model"])], None


def cmd_permtest(args):
    doc = _load_fit_recipe(args.fit)
    panel, spec, _, _ = _model_from_recipe(doc["model"])
    res = permutation_test(panel, spec, args.stat, B=args.B, seed=args.seed, threads=_threads(args))
    out = res.to_dict()
    out["statistic"] = args.stat
    _write_json(out, args.out)
    return [args.fit, *_recipe_inputs(doc["model"])], args.seed


def cmd_moran(args):
    doc = _load_fit_recipe(args.fit)
    centroids = _read_centroids(args.centroids)
    W = SpatialWeights.parse(args.wk, centroids)
    res = doc["residuals"]
    r = panel_morans_i(res["value"], res["unit_id"], res["year"], W, n_perm=args.perm, seed=args.seed)
    _write_json({"I": r.I, "p": r.p, "expected": r.expected, "n_perm": r.n_perm, "weights": args.wk}, args.out)
    return [args.fit, args.centroids], args.seed


def cmd_sem(args):
    doc = _load_fit_recipe(args.fit)
    panel, spec, _, _ = _model_from_recipe(doc["model"])
    centroids = _read_centroids(args.centroids)
    W = SpatialWeights.parse(args.wk, centroids)
    res = sem_ml(panel, spec, W)
    out = res.to_dict()
    out["weights"] = args.wk
    _write_json(out, args.out)
    return [args.fit, args.centroids], None


def cmd_speccurve(args):
    panel = read_panel_csv(args.panel)
    inputs = [args.panel]
    if args.weather:
        weather = pd.read_csv(args.weather, dtype={"unit_id": str}, float_precision="round_trip")
        keep = [c for c in panel.frame.columns if c not in weather.columns or c in ("unit_id", "year")]
        panel = PanelTable(panel.frame[keep].merge(weather, on=["unit_id", "year"], how="inner"))
        inputs.append(args.weather)
    grid = SpecGrid(
        temperatures=tuple(_split(args.temps)), precipitation=tuple(v == "precip" for v in _split(args.precip)),
        forms=tuple(_split(args.forms)), seasons=tuple(_split(args.seasons)), trends=tuple(_split(args.trends)),
        baseline=Descriptor.parse(args.baseline),
    )
    centroids = _read_centroids(args.centroids) if args.centroids else None
    results = run_grid(panel, grid, se=args.se, delta=args.delta, fixed_effects=tuple(_split(args.fe)),
                       region=args.region, log_outcome=args.log_outcome, centroids=centroids, threads=_threads(args))
    render_chart(results, sort=args.sort, out_svg=args.out_svg, out_csv=args.out_csv)
    return inputs, None


def cmd_simulate(args):
    cfg = {}
    inputs = []
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        inputs.append(args.config)
    cfg["seed"] = args.seed
    config = DGPConfig.from_dict(cfg)
    data = generate(config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_panel_csv(PanelTable(data.panel.frame.drop(columns=bin_columns(config.bins.K))), out / "panel.csv")
    data.weather.to_csv(out / "weather.csv", index=False, float_format=FLOAT_FMT)
    write_bins_csv(data.exposure, out / "bins_truth.csv", config.bins)
    data.centroids.to_csv(out / "centroids.csv", index=False, float_format=FLOAT_FMT)
    write_admin_csv(data.units, out / "admin.csv")
    write_stations_csv(data.stations, out / "stations.csv")
    (out / "stack").mkdir(exist_ok=True)
    write_grid_stack(data.stack, out / "stack" / "tmax_stack.csv")
    write_ascii_grid(data.weight_grid, out / "weights.asc")
    months = parse_season(config.season)
    for var in ("tmax", "tmin"):
        data.unit_daily_frame(var, months).to_csv(out / f"A_{var}.csv", index=False, float_format=FLOAT_FMT)
    _write_json(data.truth, out / "truth.json")
    _write_json(config.to_dict(), out / "dgp.json")
    return inputs, args.seed


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads (default: $AGROPANEL_THREADS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="agropanel", description="Weather-to-econometrics pipeline.")
    parser.add_argument("--version", action="version", version=f"agropanel {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def add(name, func, help_text, out_flag="--out", outputs=None):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func, out_attr=out_flag.lstrip("-").replace("-", "_"))
        return p

    p = add("interpolate", cmd_interpolate, "Interpolate station data onto a grid.")
    p.add_argument("--stations", required=True)
    p.add_argument("--grid", "--template", dest="template", required=True, help="grid whose geometry is used")
    p.add_argument("--var", "--variable", dest="variable", required=True, choices=["tmax", "tmin", "ppt"])
    when = p.add_mutually_exclusive_group(required=True)
    when.add_argument("--date", help="single ISO date; writes one .asc")
    when.add_argument("--month", help="YYYY-MM; writes a stack manifest")
    p.add_argument("--method", default="knn", choices=sorted(_METHOD_ALIASES))
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--radius", type=float, default=1.0, help="degrees of arc")
    p.add_argument("--power", type=float, default=1.0)
    p.add_argument("--reference", help="monthly reference grid for infusion")
    p.add_argument("--out", required=True)

    p = add("zonal", cmd_zonal, "Fraction of each coarse cell covered by a class of a fine grid.")
    p.add_argument("--fine", required=True)
    p.add_argument("--coarse", required=True)
    p.add_argument("--class", dest="class_code", type=float, required=True)
    p.add_argument("--out", required=True)

    p = add("project", cmd_project, "Aggregate a grid stack to administrative units.")
    p.add_argument("--stack", required=True, help="stack manifest CSV or a single .asc")
    p.add_argument("--weights", "--units", dest="units", required=True, help="unit_id,cell_index,weight CSV")
    p.add_argument("--weight-grid", help="activity weights per cell (e.g. cropland fraction)")
    p.add_argument("--out", required=True)

    p = add("bins", cmd_bins, "Seasonal temperature exposure bins from unit daily Tmin/Tmax.")
    p.add_argument("--tmax", required=True)
    p.add_argument("--tmin", required=True)
    p.add_argument("--lo", type=float, default=0.0)
    p.add_argument("--hi", type=float, default=38.0)
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--season", default="04-09")
    p.add_argument("--step", type=int, default=15, help="minutes between intra-day samples")
    p.add_argument("--out", required=True)

    p = add("degdays", cmd_degdays, "Degree days between two thresholds from exposure bins.")
    p.add_argument("--bins", required=True)
    p.add_argument("--from", dest="from_", type=float, required=True)
    p.add_argument("--to", type=float, default=None)
    p.add_argument("--lo", type=float, default=None, help="bin grid lower edge when no sidecar exists")
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--out", required=True)

    p = add("regress", cmd_regress, "Fixed-effects panel regression.")
    p.add_argument("--panel", required=True)
    p.add_argument("--bins")
    p.add_argument("--basis", default=None, help="default ncs when --bins is given", choices=["ncs", "step", "chebyshev", "bins", "identity", "none"])
    p.add_argument("--df", type=int, default=7)
    p.add_argument("--step-width", type=float, default=None)
    p.add_argument("--degree", type=int, default=8)
    p.add_argument("--lo", type=float, default=None)
    p.add_argument("--width", type=float, default=None)
    p.add_argument("--poly", default="", help="polynomial terms, e.g. tmean:2,ppt:2")
    p.add_argument("--regressors", default="", help="columns used as they are")
    p.add_argument("--temperature", help="column shifted by warming scenarios")
    p.add_argument("--fe", default="unit_id", help="absorbed effects, e.g. unit,year or unit,state:year")
    p.add_argument("--trend", default="none", help="none, pooled-linear|quadratic, or COLUMN-linear|quadratic")
    p.add_argument("--se", default="iid", help="iid|hc0|hc1|cluster:COL|twoway:A,B|conley:KM[,LAGS]")
    p.add_argument("--centroids", help="unit_id,lat,lon CSV (needed for conley)")
    p.add_argument("--weights")
    p.add_argument("--log-outcome", action="store_true")
    p.add_argument("--out", required=True)

    p = add("impact", cmd_impact, "Average effect of uniform warming for a fitted model.")
    p.add_argument("--fit", required=True)
    p.add_argument("--delta", type=float, default=2.0)
    p.add_argument("--out", required=True)

    p = add("permtest", cmd_permtest, "Placebo test reshuffling weather across units.")
    p.add_argument("--fit", required=True)
    p.add_argument("--B", type=_positive_int, default=999)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--stat", default="warming:2", help="warming:DELTA, coef:NAME or linear:a=w,b=w")
    p.add_argument("--out", required=True)

    p = add("moran", cmd_moran, "Moran's I of fitted residuals.")
    p.add_argument("--fit", required=True)
    p.add_argument("--centroids", required=True)
    p.add_argument("--wk", default="knn:5", help="knn:K or dist:KM")
    p.add_argument("--perm", type=int, default=999)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)

    p = add("sem", cmd_sem, "Maximum-likelihood spatial error model.")
    p.add_argument("--fit", required=True)
    p.add_argument("--centroids", required=True)
    p.add_argument("--wk", default="knn:5")
    p.add_argument("--out", required=True)

    p = add("speccurve", cmd_speccurve, "Specification curve over a grid of models.", out_flag="--out-csv")
    p.add_argument("--panel", required=True)
    p.add_argument("--weather")
    p.add_argument("--baseline", default="tmean,precip,quadratic,mar_aug,pooled")
    p.add_argument("--temps", default="tmax,tmean,tmin")
    p.add_argument("--precip", default="precip,noprecip")
    p.add_argument("--forms", default="quadratic,cubic")
    p.add_argument("--seasons", default="mar_aug,apr_sep,annual")
    p.add_argument("--trends", default="pooled,by_state")
    p.add_argument("--fe", default="unit_id")
    p.add_argument("--region", default="state")
    p.add_argument("--se", default="iid")
    p.add_argument("--centroids")
    p.add_argument("--delta", type=float, default=2.0)
    p.add_argument("--sort", default="adj_r2", choices=["adj_r2", "estimate", "input_order"])
    p.add_argument("--log-outcome", action="store_true")
    p.add_argument("--out-svg", required=True)
    p.add_argument("--out-csv", required=True)

    p = add("simulate", cmd_simulate, "Write a synthetic data set.", out_flag="--out-dir")
    p.add_argument("--config", help="JSON object of generator settings")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        inputs, seed = args.func(args)
        out = getattr(args, args.out_attr)
        if args.command == "simulate":
            out = str(Path(out) / "simulate")
        outputs = [args.out_svg, args.out_csv] if args.command == "speccurve" else None
        _write_manifest(out, args, inputs, started, seed, outputs)
    except (AgropanelError, ValueError, KeyError) as exc:
        if isinstance(exc, AgropanelError) and not isinstance(exc, ValidationError):
            print(f"agropanel {args.command}: {exc}", file=sys.stderr)
            return 1
        print(f"agropanel {args.command}: invalid input: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"agropanel {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
