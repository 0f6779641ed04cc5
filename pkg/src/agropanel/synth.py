"""Synthetic weather, yields and reference solvers for testing.

The generator builds a gridded daily weather field, aggregates it to
administrative units through a sparse projection, turns unit weather into
seasonal exposure bins and produces an outcome

    y_it = sum_k g(m_k) z_itk + b_p p_it + b_p2 p_it^2 + a_i + trend * t + e_it

with a piecewise-linear response ``g`` over bin midpoints ``m_k`` (zero at
the lowest midpoint, kinked at ``g_kink``).  Every random component comes
from its own seeded stream (see :mod:`agropanel.rng`).
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .aggregate import ProjectionMatrix
from .core import AdminUnits, Grid, GridHeader, GridStack, PanelTable, StationTable
from .exceptions import ConfigurationError, ValidationError
from .rng import stream
from .spatial import SpatialWeights
from .thermal import BinGrid, SineConfig, bin_columns, exposure_matrix, parse_season

ERROR_MODELS = ("iid", "sar", "clustered")
SEASONS = {"mar_aug": (3, 8), "apr_sep": (4, 9), "annual": (1, 12)}
RESPONSES = ("bins", "tmax")

# stream tags
_FIELD, _UNITS, _PANEL, _NOISE, _STATIONS = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class DGPConfig:
    """Parameters of the synthetic data generating process.

    Temperatures are in degrees C, precipitation in mm/day, the outcome in
    log units.  ``response='tmax'`` replaces the bin response by a
    quadratic in seasonal mean Tmax (``tmax_coef``).
    """

    seed: int = 0
    n_units: int = 50
    n_years: int = 10
    start_year: int = 2000
    grid_rows: int = 20
    grid_cols: int = 20
    cellsize: float = 0.5
    xll: float = -100.0
    yll: float = 33.0
    n_stations: int = 25
    n_states: int = 4
    bin_lo: float = 0.0
    bin_hi: float = 38.0
    bin_width: float = 1.0
    season: str = "04-09"
    step_minutes: int = 15
    response: str = "bins"
    g_kink: float = 30.0
    g_slope_low: float = 0.0005
    g_slope_high: float = -0.006
    tmax_coef: tuple = (0.5, -0.012)
    beta_p: float = 0.05
    beta_p2: float = -0.008
    alpha_sd: float = 0.3
    trend: float = 0.01
    noise_sd: float = 0.15
    error: str = "iid"
    sar_lambda: float = 0.5
    sar_k: int = 5
    cluster_rho: float = 0.5
    lat_gradient: float = 1.2
    year_shock_sd: float = 1.0
    daily_sd: float = 3.5
    dtr_shock_sd: float = 1.5

    def __post_init__(self):
        for name in ("n_units", "n_years", "grid_rows", "grid_cols", "n_stations", "n_states", "step_minutes"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if self.n_units < 2 or self.n_years < 2:
            raise ConfigurationError("need at least 2 units and 2 years")
        if self.error not in ERROR_MODELS:
            raise ConfigurationError(f"error model must be one of {', '.join(ERROR_MODELS)}")
        if self.response not in RESPONSES:
            raise ConfigurationError(f"response must be one of {', '.join(RESPONSES)}")
        if self.error == "sar" and not -1.0 < self.sar_lambda < 1.0:
            raise ConfigurationError("sar_lambda must lie in (-1, 1) for row-normalized weights")
        if self.error == "clustered" and not 0.0 <= self.cluster_rho <= 1.0:
            raise ConfigurationError("cluster_rho must lie in [0, 1]")
        if self.noise_sd < 0 or self.alpha_sd < 0:
            raise ConfigurationError("standard deviations must be >= 0")
        object.__setattr__(self, "tmax_coef", tuple(self.tmax_coef))
        self.bins  # validates the bin grid
        parse_season(self.season)

    @property
    def bins(self) -> BinGrid:
        return BinGrid(self.bin_lo, self.bin_hi, self.bin_width)

    @property
    def header(self) -> GridHeader:
        return GridHeader(self.grid_cols, self.grid_rows, self.xll, self.yll, self.cellsize)

    def g(self, h):
        """True marginal effect of one day at temperature ``h``; zero at the lowest midpoint."""
        h = np.asarray(h, dtype=np.float64)
        m0 = self.bins.midpoints[0]
        return self.g_slope_low * (np.minimum(h, self.g_kink) - m0) + self.g_slope_high * np.maximum(h - self.g_kink, 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tmax_coef"] = list(self.tmax_coef)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DGPConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown DGP setting(s): {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass(eq=False)
class SynthData:
    config: DGPConfig
    dates: pd.DatetimeIndex
    grid_tmax: np.ndarray = field(repr=False)
    units: AdminUnits = field(repr=False)
    projection: ProjectionMatrix = field(repr=False)
    centroids: pd.DataFrame = field(repr=False)
    daily: dict = field(repr=False)
    exposure: pd.DataFrame = field(repr=False)
    weather: pd.DataFrame = field(repr=False)
    panel: PanelTable = field(repr=False)
    stations: StationTable = field(repr=False)
    stack: GridStack = field(repr=False)
    weight_grid: Grid = field(repr=False)
    truth: dict = field(repr=False)
    W: SpatialWeights | None = field(default=None, repr=False)

    def unit_daily_frame(self, variable: str, months=None) -> pd.DataFrame:
        """Long ``unit_id,label,value`` table of unit-level daily weather."""
        sel = np.ones(len(self.dates), bool) if months is None else self.dates.month.isin(list(months))
        labels = self.dates[sel].strftime("%Y-%m-%d").to_numpy()
        vals = self.daily[variable][:, sel]
        ids = np.asarray(self.units.unit_ids)
        return pd.DataFrame({
            "unit_id": np.repeat(ids, len(labels)),
            "label": np.tile(labels, len(ids)),
            "value": vals.ravel(),
        })


def _cell_coords(h: GridHeader):
    lon, lat = h.cell_centers()
    return lat, lon


def _weather_field(config: DGPConfig, dates: pd.DatetimeIndex, cell_lat, cell_lon, cell_state):
    """Daily tmin, tmax, ppt per cell, each of shape (n_cells, n_days)."""
    rng = stream(config.seed, _FIELD)
    n_cells, n_days = cell_lat.size, len(dates)
    lat0 = cell_lat.mean()
    lon0 = cell_lon.mean()
    doy = dates.dayofyear.to_numpy()
    year_idx = (dates.year - config.start_year).to_numpy()
    base = 13.0 - config.lat_gradient * (cell_lat - lat0)
    seasonal = -13.0 * np.cos(2 * np.pi * (doy - 15) / 365.25)
    shocks = rng.normal(0.0, config.year_shock_sd, (config.n_states, config.n_years))
    modes = np.vstack([
        np.ones(n_cells),
        np.cos(np.radians(cell_lat - lat0) * 15),
        np.sin(np.radians(cell_lon - lon0) * 15),
    ])
    ar = np.empty((modes.shape[0], n_days))
    phi = 0.7
    innov = rng.normal(0.0, config.daily_sd * np.sqrt(1 - phi ** 2), ar.shape)
    ar[:, 0] = rng.normal(0.0, config.daily_sd, modes.shape[0])
    for d in range(1, n_days):
        ar[:, d] = phi * ar[:, d - 1] + innov[:, d]
    tmean = base[:, None] + seasonal[None, :] + shocks[cell_state][:, year_idx] + modes.T @ ar / np.sqrt(3)
    tmean += rng.normal(0.0, 0.5, tmean.shape)
    dtr_shift = rng.normal(0.0, config.dtr_shock_sd, (config.n_states, config.n_years))[cell_state][:, year_idx]
    dtr = np.clip(11.0 + dtr_shift + 2.5 * rng.standard_normal(tmean.shape), 2.0, None)
    tmax = tmean + dtr / 2
    tmin = tmean - dtr / 2
    wet = rng.random(tmean.shape) < 0.3
    scale = np.exp(rng.normal(0.0, 0.25, (config.n_states, config.n_years)))[cell_state][:, year_idx]
    ppt = np.where(wet, rng.exponential(7.0, tmean.shape) * scale, 0.0)
    return tmin, tmax, ppt


def _make_units(config: DGPConfig, h: GridHeader, cell_lat, cell_lon):
    rng = stream(config.seed, _UNITS)
    n_cells = h.size
    replace = config.n_units > n_cells
    centers = np.sort(rng.choice(n_cells, size=config.n_units, replace=replace))
    width = len(str(config.n_units - 1))
    ids = [f"U{i:0{width}d}" for i in range(config.n_units)]
    cells, shares = [], []
    for c in centers:
        r, k = divmod(int(c), h.ncols)
        nbrs = [(r + dr) * h.ncols + (k + dc) for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1))
                if 0 <= r + dr < h.nrows and 0 <= k + dc < h.ncols]
        extra = rng.choice(nbrs, size=min(len(nbrs), int(rng.integers(1, 4))), replace=False) if nbrs else []
        member = np.concatenate([[c], np.asarray(extra, dtype=np.int64)]).astype(np.int64)
        cells.append(member)
        shares.append(rng.uniform(0.2, 1.0, member.size))
    weights = [s / s.sum() for s in shares]
    lat = np.array([np.dot(w, cell_lat[m]) for m, w in zip(cells, weights)])
    lon = np.array([np.dot(w, cell_lon[m]) for m, w in zip(cells, weights)])
    units = AdminUnits(ids, cells, weights, centroids=list(zip(lat, lon)), n_cells=n_cells)
    return units, centers, lat, lon


def _season_mask(dates, months):
    return dates.month.isin(list(months))


def _seasonal_weather(config, dates, ids, tmin, tmax, ppt):
    years = dates.year.to_numpy()
    out = pd.DataFrame({
        "unit_id": np.repeat(ids, config.n_years),
        "year": np.tile(np.arange(config.start_year, config.start_year + config.n_years), len(ids)),
    })
    for name, (a, b) in SEASONS.items():
        mask = _season_mask(dates, range(a, b + 1))
        for var, arr in (("tmax", tmax), ("tmin", tmin), ("tmean", (tmax + tmin) / 2), ("ppt", ppt)):
            sub = arr[:, mask]
            yrs = years[mask]
            means = np.column_stack([sub[:, yrs == y].mean(axis=1) for y in np.unique(yrs)])
            out[f"{var}_{name}"] = means.ravel()
    return out


def generate(config: DGPConfig = DGPConfig()) -> SynthData:
    """Draw one synthetic data set; identical configs give identical output."""
    h = config.header
    cell_lat, cell_lon = _cell_coords(h)
    n_cells = h.size
    col = np.arange(n_cells) % h.ncols
    cell_state = np.minimum(col * config.n_states // h.ncols, config.n_states - 1)
    dates = pd.date_range(f"{config.start_year}-01-01", f"{config.start_year + config.n_years - 1}-12-31", freq="D")
    g_tmin, g_tmax, g_ppt = _weather_field(config, dates, cell_lat, cell_lon, cell_state)

    units, centers, ulat, ulon = _make_units(config, h, cell_lat, cell_lon)
    rows, cols, w = units.triplets()
    P = ProjectionMatrix.from_triplets(rows, cols, w, units.unit_ids, n_cells)
    tmin = P.csr @ g_tmin
    tmax = P.csr @ g_tmax
    ppt = P.csr @ g_ppt
    ids = np.asarray(units.unit_ids)
    state = np.array([f"S{s}" for s in cell_state[centers]])
    centroids = pd.DataFrame({"unit_id": ids, "lat": ulat, "lon": ulon, "state": state})

    # exposure bins over the configured season
    bins = config.bins
    months = parse_season(config.season)
    smask = _season_mask(dates, months)
    years = dates.year.to_numpy()[smask]
    n_days = np.bincount(years - config.start_year, minlength=config.n_years).tolist()
    sine = SineConfig(step_minutes=config.step_minutes)
    Z = []
    for y in range(config.start_year, config.start_year + config.n_years):
        m = smask & (dates.year == y)
        Z.append(exposure_matrix(tmin[:, m], tmax[:, m], bins, sine))
    Z = np.stack(Z, axis=1).reshape(config.n_units * config.n_years, bins.K)
    zcols = bin_columns(bins.K)
    exposure = pd.DataFrame(Z, columns=zcols)
    exposure.insert(0, "year", np.tile(np.arange(config.start_year, config.start_year + config.n_years), config.n_units))
    exposure.insert(0, "unit_id", np.repeat(ids, config.n_years))

    weather = _seasonal_weather(config, dates, ids, tmin, tmax, ppt)
    a, b = months[0], months[-1]
    season_ppt = ppt[:, smask]
    p = np.column_stack([season_ppt[:, years == y].mean(axis=1) for y in np.unique(years)]).ravel()
    season_tmax = tmax[:, smask]
    tx = np.column_stack([season_tmax[:, years == y].mean(axis=1) for y in np.unique(years)]).ravel()

    # outcome
    prng = stream(config.seed, _PANEL)
    alpha = prng.normal(0.0, config.alpha_sd, config.n_units)
    t = np.tile(np.arange(config.n_years, dtype=np.float64), config.n_units)
    g_mid = config.g(bins.midpoints)
    if config.response == "bins":
        signal = Z @ g_mid
    else:
        signal = config.tmax_coef[0] * tx + config.tmax_coef[1] * tx ** 2
    mean = signal + config.beta_p * p + config.beta_p2 * p ** 2 + np.repeat(alpha, config.n_years) + config.trend * t
    eps, W = _errors(config, ulat, ulon, ids, state)
    y = mean + eps

    panel_frame = pd.DataFrame({
        "unit_id": np.repeat(ids, config.n_years),
        "year": exposure["year"].to_numpy(),
        "y": y,
        "state": np.repeat(state, config.n_years),
        "tmax": tx,
        "ppt": p,
    })
    panel_frame = pd.concat([panel_frame, weather.drop(columns=["unit_id", "year"]), exposure[zcols]], axis=1)
    panel = PanelTable(panel_frame)

    stations, stack = _stations_and_stack(config, dates, h, g_tmin, g_tmax, g_ppt, months)
    weight_grid = Grid.from_header(h, np.ones(n_cells))
    truth = {
        "config": config.to_dict(),
        "bin_midpoints": bins.midpoints.tolist(),
        "g": g_mid.tolist(),
        "alpha": dict(zip(ids.tolist(), alpha.tolist())),
        "beta_p": config.beta_p,
        "beta_p2": config.beta_p2,
        "trend": config.trend,
        "season": config.season,
        "season_months": [a, b],
        "season_days_per_year": n_days,
    }
    return SynthData(
        config=config, dates=dates, grid_tmax=g_tmax, units=units, projection=P, centroids=centroids,
        daily={"tmin": tmin, "tmax": tmax, "ppt": ppt}, exposure=exposure, weather=weather, panel=panel,
        stations=stations, stack=stack, weight_grid=weight_grid, truth=truth, W=W,
    )


def _errors(config: DGPConfig, lat, lon, ids, state):
    rng = stream(config.seed, _NOISE)
    n, T = config.n_units, config.n_years
    W = None
    if config.error == "iid":
        eps = rng.normal(0.0, config.noise_sd, (n, T))
    elif config.error == "sar":
        W = SpatialWeights.knn(lat, lon, k=min(config.sar_k, n - 1), ids=ids)
        A = (sp.identity(n, format="csc") - config.sar_lambda * W.matrix).tocsc()
        lu = spla.splu(A)
        eps = lu.solve(rng.normal(0.0, config.noise_sd, (n, T)))
    else:
        codes, levels = pd.factorize(state, sort=True)
        common = rng.normal(0.0, 1.0, (len(levels), T))[codes]
        own = rng.normal(0.0, 1.0, (n, T))
        eps = config.noise_sd * (np.sqrt(config.cluster_rho) * common + np.sqrt(1 - config.cluster_rho) * own)
    return eps.ravel(), W


def _stations_and_stack(config, dates, h, g_tmin, g_tmax, g_ppt, months):
    """Station records and a daily Tmax stack for the first season month."""
    rng = stream(config.seed, _STATIONS)
    first = (dates.year == config.start_year) & (dates.month == months[0])
    labels = dates[first].strftime("%Y-%m-%d").tolist()
    stack = GridStack(h, g_tmax[:, first].T.copy(), labels)
    xs = rng.uniform(h.xll, h.xll + h.ncols * h.cellsize, config.n_stations)
    ys = rng.uniform(h.yll, h.yll + h.nrows * h.cellsize, config.n_stations)
    cells = np.array([h.cell_index(x, y) for x, y in zip(xs, ys)])
    noise = rng.normal(0.0, 0.3, (config.n_stations, int(first.sum())))
    records = []
    width = len(str(config.n_stations - 1))
    for s in range(config.n_stations):
        sid = f"ST{s:0{width}d}"
        lo = g_tmin[cells[s], first] + noise[s]
        hi = np.maximum(g_tmax[cells[s], first] + noise[s], lo)
        pr = g_ppt[cells[s], first]
        for d, lab in enumerate(labels):
            records.append((sid, ys[s], xs[s], lab, "tmax", hi[d]))
            records.append((sid, ys[s], xs[s], lab, "tmin", lo[d]))
            records.append((sid, ys[s], xs[s], lab, "ppt", pr[d]))
    frame = pd.DataFrame(records, columns=["station_id", "lat", "lon", "date", "variable", "value"])
    return StationTable(frame), stack


# ---------------------------------------------------------------------------
# reference solvers


def dummy_matrix(frame: pd.DataFrame, fixed_effects) -> np.ndarray:
    """Explicit dummy columns: all levels of the first effect, all but one of the rest."""
    blocks = []
    for i, fe in enumerate(fixed_effects):
        key = frame[fe.split(":")].astype(str).agg("\x1f".join, axis=1) if ":" in fe else frame[fe].astype(str)
        levels = sorted(key.unique())
        use = levels if i == 0 else levels[1:]
        blocks.append(np.column_stack([(key == lv).to_numpy(dtype=np.float64) for lv in use]))
    return np.hstack(blocks) if blocks else np.empty((len(frame), 0))


def oracle_dense_ols(y, X) -> np.ndarray:
    """Normal-equations least squares ``(X'X)^-1 X'y`` on a dense design.

    Raises
    ------
    ValidationError
        If ``X'X`` is numerically singular.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    XtX = X.T @ X
    if np.linalg.cond(XtX) > 1e14:
        raise ValidationError("design is singular; the normal equations have no unique solution")
    return np.linalg.solve(XtX, X.T @ y)
