"""Intra-day temperature reconstruction, exposure bins and degree days.

Daily minimum and maximum temperatures are joined by half-cosine segments
through the anchors ``Tmin_d @ tmin_hour -> Tmax_d @ tmax_hour ->
Tmin_{d+1} @ tmin_hour``.  Sampling that curve every few minutes and
counting samples per 1-degree interval gives the time (in days) spent in
each temperature bin.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd

from .core import FLOAT_FMT
from .exceptions import ShapeError, ValidationError

MINUTES_PER_DAY = 1440


@dataclass(frozen=True)
class SineConfig:
    """Sampling step and anchor hours of the double-sine curve."""

    step_minutes: int = 15
    tmin_hour: float = 6.0
    tmax_hour: float = 15.0

    def __post_init__(self):
        if int(self.step_minutes) != self.step_minutes or self.step_minutes <= 0:
            raise ValidationError(f"step_minutes must be a positive integer, got {self.step_minutes!r}")
        if MINUTES_PER_DAY % int(self.step_minutes):
            raise ValidationError(f"1440 is not divisible by step_minutes={self.step_minutes}")
        if not 0 <= self.tmin_hour < 24:
            raise ValidationError(f"tmin_hour must lie in [0, 24), got {self.tmin_hour!r}")
        if not self.tmin_hour < self.tmax_hour < 24:
            raise ValidationError("tmax_hour must be later in the day than tmin_hour")

    @property
    def samples_per_day(self) -> int:
        return MINUTES_PER_DAY // int(self.step_minutes)


@dataclass(frozen=True)
class BinGrid:
    """Temperature bins ``[lo + k*width, lo + (k+1)*width)`` for ``k = 0..K-1``.

    ``lo`` and ``hi`` are the lower edges of the first and last bin, so bins
    "from 0 to 38" have ``K = 39``.  With bottom/top coding, samples below
    ``lo`` fall in the first bin and samples at or above ``hi`` in the last.
    """

    lo: float
    hi: float
    width: float = 1.0
    bottom_code: bool = True
    top_code: bool = True

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValidationError(f"bin range needs hi > lo, got lo={self.lo}, hi={self.hi}")
        if not self.width > 0:
            raise ValidationError(f"bin width must be > 0, got {self.width}")
        n = (self.hi - self.lo) / self.width
        if abs(n - round(n)) > 1e-9:
            raise ValidationError(f"(hi - lo) / width = {n} is not an integer")

    @property
    def K(self) -> int:
        return int(round((self.hi - self.lo) / self.width)) + 1

    @property
    def edges(self) -> np.ndarray:
        return self.lo + self.width * np.arange(self.K + 1)

    @property
    def midpoints(self) -> np.ndarray:
        return self.lo + self.width * (np.arange(self.K) + 0.5)

    def index(self, temps) -> np.ndarray:
        """Bin index of each temperature; -1 or K when outside and not coded."""
        temps = np.asarray(temps, dtype=np.float64)
        k = np.atleast_1d(temps - self.lo)
        k /= self.width
        np.floor(k, out=k)
        lo_bound = 0 if self.bottom_code else -1
        hi_bound = self.K - 1 if self.top_code else self.K
        np.clip(k, lo_bound, hi_bound, out=k)
        return k.astype(np.int64).reshape(temps.shape)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TemperatureSeries:
    """Sampled intra-day temperature curve.

    ``minutes`` are offsets from midnight of the first day; ``end_temp`` is
    the curve value at the end of the last day, so the samples cover
    ``n_days`` exactly.
    """

    minutes: np.ndarray
    temps: np.ndarray
    step_minutes: int
    end_temp: float

    @property
    def duration_days(self) -> float:
        return len(self.temps) * self.step_minutes / MINUTES_PER_DAY


@dataclass(frozen=True, eq=False)
class ExposureBins:
    """Days spent in each temperature bin for one unit and period."""

    unit_id: str
    period: str
    z: np.ndarray
    season_length: float


def _check_daily(tmin, tmax):
    tmin = np.atleast_2d(np.asarray(tmin, dtype=np.float64))
    tmax = np.atleast_2d(np.asarray(tmax, dtype=np.float64))
    if tmin.shape != tmax.shape or tmin.shape[-1] < 1:
        raise ShapeError(f"tmin and tmax must have equal, nonempty shapes; got {tmin.shape} and {tmax.shape}")
    if not (np.isfinite(tmin).all() and np.isfinite(tmax).all()):
        raise ValidationError("daily temperatures must be finite")
    bad = tmax < tmin
    if bad.any():
        obs, day = np.argwhere(bad)[0]
        where = f"day {day}" if tmin.shape[0] == 1 else f"series {obs}, day {day}"
        raise ValidationError(f"tmax < tmin on {where} ({tmax[obs, day]} < {tmin[obs, day]})")
    return tmin, tmax


def _anchors(tmin, tmax, config: SineConfig):
    n_days = tmin.shape[1]
    day0 = np.arange(n_days) * MINUTES_PER_DAY
    times = np.empty(2 * n_days)
    times[0::2] = day0 + config.tmin_hour * 60.0
    times[1::2] = day0 + config.tmax_hour * 60.0
    values = np.empty((tmin.shape[0], 2 * n_days))
    values[:, 0::2] = tmin
    values[:, 1::2] = tmax
    return times, values


def _evaluate(times, values, t):
    """Half-cosine interpolation through anchors, flat outside the first/last."""
    seg = np.searchsorted(times, t, side="right") - 1
    before = seg < 0
    after = seg >= len(times) - 1
    s = np.clip(seg, 0, len(times) - 2)
    t0, t1 = times[s], times[s + 1]
    frac = np.where(before | after, 0.0, (t - t0) / (t1 - t0))
    v0 = values[:, s]
    v1 = values[:, s + 1]
    out = v0 + (v1 - v0) * (1.0 - np.cos(np.pi * frac)) / 2.0
    out[:, before] = values[:, :1]
    out[:, after] = values[:, -1:]
    return out


def sine_values(tmin, tmax, config: SineConfig = SineConfig()):
    """Sampled curves for a batch of daily sequences.

    Parameters
    ----------
    tmin, tmax : array_like, shape (n_series, n_days) or (n_days,)

    Returns
    -------
    temps : ndarray, shape (n_series, n_days * samples_per_day)
    end : ndarray, shape (n_series,)
        Curve value at the end of the last day.
    """
    tmin, tmax = _check_daily(tmin, tmax)
    times, values = _anchors(tmin, tmax, config)
    n_days = tmin.shape[1]
    t = np.arange(n_days * config.samples_per_day) * float(config.step_minutes)
    temps = _evaluate(times, values, t)
    end = _evaluate(times, values, np.array([n_days * float(MINUTES_PER_DAY)]))[:, 0]
    return temps, end


def sine_series(tmin_seq, tmax_seq, config: SineConfig = SineConfig()) -> TemperatureSeries:
    """Double-sine intra-day curve sampled every ``config.step_minutes``.

    The curve passes through each day's Tmax exactly at ``tmax_hour`` and
    each Tmin at ``tmin_hour``; before the first and after the last anchor
    it is held flat.
    """
    tmin = np.asarray(tmin_seq, dtype=np.float64).ravel()
    tmax = np.asarray(tmax_seq, dtype=np.float64).ravel()
    temps, end = sine_values(tmin[None, :], tmax[None, :], config)
    minutes = np.arange(temps.shape[1]) * int(config.step_minutes)
    return TemperatureSeries(minutes, temps[0], int(config.step_minutes), float(end[0]))


def bin_counts(temps, bins: BinGrid) -> np.ndarray:
    """Sample counts per bin for each row of ``temps`` (shape ``(n, samples)``)."""
    temps = np.atleast_2d(np.asarray(temps, dtype=np.float64))
    n, K = temps.shape[0], bins.K
    idx = bins.index(temps)
    if bins.bottom_code and bins.top_code:
        idx += (np.arange(n, dtype=np.int64) * K)[:, None]
        return np.bincount(idx.ravel(), minlength=n * K).reshape(n, K)
    keep = (idx >= 0) & (idx < K)
    rows = np.broadcast_to(np.arange(n)[:, None], idx.shape)
    flat = (rows * K + idx)[keep]
    return np.bincount(flat, minlength=n * K).reshape(n, K)


def bin_exposure(series: TemperatureSeries, bins: BinGrid, unit_id: str = "", period: str = "") -> ExposureBins:
    """Days spent in each bin: sample count times the step, in days."""
    if len(series.temps) == 0:
        raise ValidationError("cannot bin an empty series")
    counts = bin_counts(series.temps[None, :], bins)[0]
    z = counts * (series.step_minutes / MINUTES_PER_DAY)
    return ExposureBins(str(unit_id), str(period), z, series.duration_days)


def exposure_matrix(tmin, tmax, bins: BinGrid, config: SineConfig = SineConfig(), chunk: int = 256) -> np.ndarray:
    """Exposure bins for many daily sequences at once, shape ``(n_series, K)``."""
    tmin, tmax = _check_daily(tmin, tmax)
    out = np.empty((tmin.shape[0], bins.K))
    scale = config.step_minutes / MINUTES_PER_DAY
    for start in range(0, tmin.shape[0], chunk):
        temps, _ = sine_values(tmin[start : start + chunk], tmax[start : start + chunk], config)
        out[start : start + chunk] = bin_counts(temps, bins) * scale
    return out


def _check_thresholds(h_lo, h_hi):
    if not h_lo < h_hi:
        raise ValidationError(f"degree-day thresholds need h_lo < h_hi, got {h_lo} and {h_hi}")


def degree_days_exact(series: TemperatureSeries, h_lo: float, h_hi: float = math.inf) -> float:
    """Thermal time between two thresholds, in degree-days.

    Integrates ``clamp(h(t), h_lo, h_hi) - h_lo`` over the sampled curve with
    the trapezoid rule (the end-of-period value closes the last interval).
    """
    _check_thresholds(h_lo, h_hi)
    h = np.append(series.temps, series.end_temp)
    H = np.clip(h, h_lo, h_hi) - h_lo
    area = (H[:-1] + H[1:]).sum() / 2.0 * series.step_minutes
    return float(area / MINUTES_PER_DAY)


def degree_days_from_bins(z, bins: BinGrid, h_lo: float, h_hi: float = math.inf):
    """Degree days from exposure bins, weighting each bin by its midpoint.

    ``z`` may be an :class:`ExposureBins`, a length-K vector or an ``(n, K)``
    matrix; the result has the matching shape (scalar or length n).
    """
    _check_thresholds(h_lo, h_hi)
    if isinstance(z, ExposureBins):
        z = z.z
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != bins.K:
        raise ShapeError(f"exposure has {z.shape[-1]} bins, bin grid has {bins.K}")
    weight = np.clip(bins.midpoints, h_lo, h_hi) - h_lo
    dd = z @ weight
    return float(dd) if np.ndim(dd) == 0 else dd


def shift_bins(Z, n: int) -> np.ndarray:
    """Move exposure ``n`` bins up (warming) or down, piling up at the coded ends."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    K = Z.shape[1]
    n = int(n)
    if n == 0:
        return Z.copy()
    out = np.zeros_like(Z)
    src = np.arange(K)
    dst = np.clip(src + n, 0, K - 1)
    for s, d in zip(src, dst):
        out[:, d] += Z[:, s]
    return out


# ---------------------------------------------------------------------------
# seasons and tables


def parse_season(text: str) -> tuple[int, ...]:
    """Months covered by a ``MM-MM`` season string, e.g. ``04-09`` -> April..September."""
    try:
        a, b = (int(x) for x in str(text).split("-"))
    except ValueError as exc:
        raise ValidationError(f"season must look like MM-MM, got {text!r}") from exc
    if not (1 <= a <= 12 and 1 <= b <= 12 and a <= b):
        raise ValidationError(f"season months out of order or range: {text!r}")
    return tuple(range(a, b + 1))


def exposure_table(daily: pd.DataFrame, bins: BinGrid, months, config: SineConfig = SineConfig()) -> pd.DataFrame:
    """Seasonal exposure bins per unit-year from daily ``tmin``/``tmax``.

    Parameters
    ----------
    daily : DataFrame
        Columns ``unit_id, date, tmin, tmax``.
    months : iterable of int
        Calendar months making up the season (within one year).

    Returns
    -------
    DataFrame with columns ``unit_id, year, z_0 .. z_{K-1}``.
    """
    frame = daily.copy()
    dates = pd.to_datetime(frame["date"], format="%Y-%m-%d")
    frame["year"] = dates.dt.year
    frame = frame[dates.dt.month.isin(list(months))].copy()
    frame["_d"] = pd.to_datetime(frame["date"], format="%Y-%m-%d")
    frame = frame.sort_values(["unit_id", "year", "_d"], kind="mergesort")
    if frame.empty:
        raise ValidationError("no daily records fall inside the season")
    sizes = frame.groupby(["unit_id", "year"], sort=False).size()
    pieces = []
    for n_days, keys in sizes.groupby(sizes):
        index = keys.index
        sub = frame.set_index(["unit_id", "year"]).loc[index]
        tmin = sub["tmin"].to_numpy().reshape(len(index), n_days)
        tmax = sub["tmax"].to_numpy().reshape(len(index), n_days)
        Z = exposure_matrix(tmin, tmax, bins, config)
        part = pd.DataFrame(Z, columns=bin_columns(bins.K))
        part.insert(0, "year", index.get_level_values(1).astype(np.int64))
        part.insert(0, "unit_id", index.get_level_values(0).astype(str))
        pieces.append(part)
    out = pd.concat(pieces, ignore_index=True)
    return out.sort_values(["unit_id", "year"], kind="mergesort").reset_index(drop=True)


def bin_columns(K: int) -> list[str]:
    return [f"z_{k}" for k in range(K)]


def write_bins_csv(table: pd.DataFrame, path, bins: BinGrid) -> None:
    """Write ``unit_id,year,z_0..`` and a ``<path>.bins.json`` sidecar with the bin grid."""
    cols = ["unit_id", "year", *bin_columns(bins.K)]
    table[cols].to_csv(path, index=False, float_format=FLOAT_FMT)
    with open(f"{path}.bins.json", "w") as fh:
        json.dump(bins.to_dict(), fh, indent=2, sort_keys=True)


def read_bins_csv(path) -> tuple[pd.DataFrame, BinGrid | None]:
    """Read a bins table and, when present, its bin-grid sidecar."""
    table = pd.read_csv(path, dtype={"unit_id": str}, float_precision="round_trip")
    if list(table.columns[:2]) != ["unit_id", "year"]:
        raise ValidationError(f"{path}: bins header must start with unit_id,year")
    K = len(table.columns) - 2
    if list(table.columns[2:]) != bin_columns(K):
        raise ValidationError(f"{path}: bin columns must be z_0..z_{K - 1}")
    table[table.columns[2:]] = table[table.columns[2:]].astype(np.float64)
    try:
        with open(f"{path}.bins.json") as fh:
            bins = BinGrid(**json.load(fh))
    except FileNotFoundError:
        bins = None
    if bins is not None and bins.K != K:
        raise ShapeError(f"{path}: sidecar declares {bins.K} bins, table has {K}")
    return table, bins
