"""Specification curves: one statistic over a grid of modelling choices.

Every combination of temperature variable, precipitation control,
functional form, season and trend is estimated, the impact of a uniform
+2 C warming is computed for each, and the results are drawn as a sorted
chart with a matrix of the choices underneath.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from .core import PanelTable
from .covariance import SEConfig
from .exceptions import AgropanelError, ValidationError
from .regress import build_spec_quadratic, fit_within, warming_impact

log = logging.getLogger(__name__)

TEMPERATURES = ("tmax", "tmean", "tmin")
PRECIP = (True, False)
FORMS = ("quadratic", "cubic")
SEASONS = ("mar_aug", "apr_sep", "annual")
TRENDS = ("pooled", "by_state")
SORT_KEYS = ("adj_r2", "estimate", "input_order")
BASELINE = ("tmean", True, "quadratic", "mar_aug", "pooled")


def _unique(values):
    return tuple(dict.fromkeys(values))


@dataclass(frozen=True, order=True)
class Descriptor:
    temperature: str
    precipitation: bool
    form: str
    season: str
    trend: str

    @property
    def key(self) -> str:
        return ",".join([self.temperature, "precip" if self.precipitation else "noprecip",
                         self.form, self.season, self.trend])

    @classmethod
    def parse(cls, text: str) -> "Descriptor":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 5:
            raise ValidationError(f"specification needs 5 comma-separated choices, got {text!r}")
        t, p, f, s, tr = parts
        if p not in ("precip", "noprecip"):
            raise ValidationError(f"precipitation choice must be precip or noprecip, got {p!r}")
        d = cls(t, p == "precip", f, s, tr)
        for value, allowed in ((t, TEMPERATURES), (f, FORMS), (s, SEASONS), (tr, TRENDS)):
            if value not in allowed:
                raise ValidationError(f"unknown choice {value!r}; expected one of {', '.join(allowed)}")
        return d


@dataclass(frozen=True)
class SpecGrid:
    """Cartesian grid of choices; duplicate axis values collapse."""

    temperatures: tuple = TEMPERATURES
    precipitation: tuple = PRECIP
    forms: tuple = FORMS
    seasons: tuple = SEASONS
    trends: tuple = TRENDS
    baseline: Descriptor = Descriptor(*BASELINE)

    def __post_init__(self):
        for name, allowed in (("temperatures", TEMPERATURES), ("precipitation", PRECIP), ("forms", FORMS),
                              ("seasons", SEASONS), ("trends", TRENDS)):
            vals = _unique(getattr(self, name))
            if not vals:
                raise ValidationError(f"grid axis {name} is empty")
            bad = [v for v in vals if v not in allowed]
            if bad:
                raise ValidationError(f"unknown {name} value(s): {bad}")
            object.__setattr__(self, name, vals)
        if isinstance(self.baseline, str):
            object.__setattr__(self, "baseline", Descriptor.parse(self.baseline))
        if self.baseline not in self.combinations():
            raise ValidationError(f"baseline {self.baseline.key} is not in the grid")

    def combinations(self) -> list[Descriptor]:
        return [Descriptor(*c) for c in itertools.product(
            self.temperatures, self.precipitation, self.forms, self.seasons, self.trends)]

    def __len__(self):
        return len(self.combinations())


@dataclass(frozen=True)
class SpecResult:
    temperature: str
    precipitation: bool
    form: str
    season: str
    trend: str
    impact: float
    se: float
    adj_r2: float
    n_obs: int
    rank: int
    baseline: bool
    error: str = ""

    @property
    def descriptor(self) -> Descriptor:
        return Descriptor(self.temperature, self.precipitation, self.form, self.season, self.trend)

    @property
    def ok(self) -> bool:
        return not self.error

    def ci(self, z=1.959963984540054):
        return self.impact - z * self.se, self.impact + z * self.se


def spec_for(d: Descriptor, fixed_effects=("unit_id",), region="state", log_outcome=False, outcome="y"):
    return build_spec_quadratic(
        temperature=f"{d.temperature}_{d.season}", precipitation=f"ppt_{d.season}",
        degree=2 if d.form == "quadratic" else 3, include_precip=d.precipitation,
        fixed_effects=fixed_effects, trends="pooled_quadratic" if d.trend == "pooled" else "by_region_quadratic",
        region=region, log_outcome=log_outcome, outcome=outcome,
    )


def required_columns(grid: SpecGrid) -> list[str]:
    cols = [f"{t}_{s}" for s in grid.seasons for t in grid.temperatures]
    if True in grid.precipitation:
        cols += [f"ppt_{s}" for s in grid.seasons]
    return cols


def run_grid(panel: PanelTable, grid: SpecGrid = SpecGrid(), se="iid", delta: float = 2.0,
             fixed_effects=("unit_id",), region="state", log_outcome=False, centroids=None,
             threads: int = 1) -> list[SpecResult]:
    """Estimate every specification and rank them by adjusted R^2.

    A specification that cannot be estimated is kept with its error
    message and sorted last; if the baseline fails the whole run fails.
    Results are sorted by adjusted R^2 (ascending), ties broken by the
    descriptor key, and ``rank`` numbers them from 1.
    """
    se = SEConfig.parse(se) if isinstance(se, str) else se
    missing = [c for c in required_columns(grid) if c not in panel.frame.columns]
    if missing:
        raise ValidationError(f"panel lacks weather column(s): {', '.join(missing)}")

    def one(d: Descriptor):
        try:
            spec = spec_for(d, fixed_effects, region, log_outcome)
            fit = fit_within(panel, spec, se=se, centroids=centroids)
            imp = warming_impact(fit, spec, delta)
            return d, imp.impact, imp.se, fit.adj_r2, fit.n_obs, ""
        except AgropanelError as exc:
            if d == grid.baseline:
                raise ValidationError(f"baseline specification {d.key} failed: {exc}") from exc
            log.warning("specification %s failed: %s", d.key, exc)
            return d, math.nan, math.nan, math.nan, 0, str(exc) or type(exc).__name__

    combos = grid.combinations()
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            raw = list(pool.map(one, combos))
        log.debug("ran %d specifications on %d threads", len(raw), threads)
    else:
        raw = [one(d) for d in combos]
    raw.sort(key=lambda r: (math.isnan(r[3]), r[3] if not math.isnan(r[3]) else 0.0, r[0].key))
    return [
        SpecResult(d.temperature, d.precipitation, d.form, d.season, d.trend, imp, s, adj, n,
                   rank, d == grid.baseline, err)
        for rank, (d, imp, s, adj, n, err) in enumerate(raw, start=1)
    ]


def sort_results(results, sort: str = "adj_r2") -> list[SpecResult]:
    if sort not in SORT_KEYS:
        raise ValidationError(f"sort must be one of {', '.join(SORT_KEYS)}")
    results = list(results)
    if sort == "input_order":
        return results
    if sort == "adj_r2":
        return sorted(results, key=lambda r: (not r.ok, r.adj_r2 if r.ok else 0.0, r.descriptor.key))
    return sorted(results, key=lambda r: (not r.ok, r.impact if r.ok else 0.0, r.descriptor.key))


# ---------------------------------------------------------------------------
# output

CSV_FIELDS = [f.name for f in fields(SpecResult)]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else "nan"
    return str(v)


def write_results_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for r in results:
            row = asdict(r)
            writer.writerow([_fmt(row[k]) for k in CSV_FIELDS])


def read_results_csv(path) -> list[SpecResult]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_FIELDS:
            raise ValidationError(f"{path}: unexpected header {reader.fieldnames}")
        for row in reader:
            out.append(SpecResult(
                temperature=row["temperature"], precipitation=row["precipitation"] == "1", form=row["form"],
                season=row["season"], trend=row["trend"], impact=float(row["impact"]), se=float(row["se"]),
                adj_r2=float(row["adj_r2"]), n_obs=int(row["n_obs"]), rank=int(row["rank"]),
                baseline=row["baseline"] == "1", error=row["error"],
            ))
    return out


_MATRIX_ROWS = [
    ("Tmax", lambda r: r.temperature == "tmax"),
    ("Tmean", lambda r: r.temperature == "tmean"),
    ("Tmin", lambda r: r.temperature == "tmin"),
    ("Precipitation", lambda r: r.precipitation),
    ("Quadratic", lambda r: r.form == "quadratic"),
    ("Cubic", lambda r: r.form == "cubic"),
    ("Mar-Aug", lambda r: r.season == "mar_aug"),
    ("Apr-Sep", lambda r: r.season == "apr_sep"),
    ("Annual", lambda r: r.season == "annual"),
    ("Pooled trend", lambda r: r.trend == "pooled"),
    ("State trends", lambda r: r.trend == "by_state"),
]

_BASE_COLOR = "#c8102e"
_INK = "#222222"


def _nice_ticks(lo, hi, n=5):
    if not math.isfinite(lo) or not math.isfinite(hi):
        return [0.0]
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    v = start
    while v <= hi + step * 1e-9:
        ticks.append(round(v, 12))
        v += step
    return ticks


def render_svg(results, title: str = "Impact of +2°C by specification") -> str:
    """Self-contained SVG of a specification chart, in the order given."""
    results = list(results)
    if not results:
        raise ValidationError("cannot draw a chart without results")
    n = len(results)
    step = 12.0
    left, right, top = 130.0, 20.0, 40.0
    plot_h, row_h = 240.0, 14.0
    width = left + right + step * max(n, 1)
    matrix_top = top + plot_h + 30.0
    height = matrix_top + row_h * len(_MATRIX_ROWS) + 20.0
    ok = [r for r in results if r.ok]
    lows = [r.ci()[0] for r in ok] + [0.0]
    highs = [r.ci()[1] for r in ok] + [0.0]
    ticks = _nice_ticks(min(lows), max(highs))
    y0, y1 = min(ticks[0], min(lows)), max(ticks[-1], max(highs))
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 1.0, y1 + 1.0

    def ypix(v):
        return top + plot_h * (y1 - v) / (y1 - y0)

    def xpix(i):
        return left + step * (i + 0.5)

    def f(v):
        return f"{v:.2f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{f(width)}" height="{f(height)}" '
        f'viewBox="0 0 {f(width)} {f(height)}" font-family="sans-serif" font-size="10">',
        f'<rect x="0" y="0" width="{f(width)}" height="{f(height)}" fill="#ffffff"/>',
        f'<text x="{f(left)}" y="20" font-size="12" fill="{_INK}">{_escape(title)}</text>',
    ]
    for t in ticks:
        yy = ypix(t)
        out.append(f'<line x1="{f(left)}" y1="{f(yy)}" x2="{f(width - right)}" y2="{f(yy)}" stroke="#e5e5e5"/>')
        out.append(f'<text x="{f(left - 6)}" y="{f(yy + 3)}" text-anchor="end" fill="{_INK}">{t:g}</text>')
    out.append(f'<line x1="{f(left)}" y1="{f(ypix(0))}" x2="{f(width - right)}" y2="{f(ypix(0))}" stroke="#888888"/>')
    out.append(f'<text x="14" y="{f(top + plot_h / 2)}" fill="{_INK}" transform="rotate(-90 14 {f(top + plot_h / 2)})" '
               f'text-anchor="middle">log points</text>')
    for i, r in enumerate(results):
        x = xpix(i)
        color = _BASE_COLOR if r.baseline else _INK
        if not r.ok:
            out.append(f'<text x="{f(x)}" y="{f(ypix(0) - 4)}" text-anchor="middle" fill="#999999">x</text>')
            continue
        lo, hi = r.ci()
        out.append(f'<line x1="{f(x)}" y1="{f(ypix(lo))}" x2="{f(x)}" y2="{f(ypix(hi))}" stroke="{color}"/>')
        out.append(f'<circle cx="{f(x)}" cy="{f(ypix(r.impact))}" r="3" fill="{color}"/>')
    for j, (label, test) in enumerate(_MATRIX_ROWS):
        yy = matrix_top + row_h * (j + 0.5)
        out.append(f'<text x="{f(left - 6)}" y="{f(yy + 3)}" text-anchor="end" fill="{_INK}">{label}</text>')
        for i, r in enumerate(results):
            color = _BASE_COLOR if r.baseline else _INK
            fill = color if test(r) else "none"
            out.append(f'<circle cx="{f(xpix(i))}" cy="{f(yy)}" r="3" fill="{fill}" stroke="{color}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_chart(results, sort: str = "adj_r2", out_svg=None, out_csv=None) -> list[SpecResult]:
    """Write the chart (SVG) and table (CSV) in the chosen order; returns that order."""
    ordered = sort_results(results, sort)
    if not ordered:
        raise ValidationError("cannot draw a chart without results")
    if out_csv is not None:
        write_results_csv(ordered, out_csv)
    if out_svg is not None:
        with open(out_svg, "w", newline="\n") as fh:
            fh.write(render_svg(ordered))
    return ordered


def baseline_count(results) -> int:
    return int(np.sum([r.baseline for r in results]))
