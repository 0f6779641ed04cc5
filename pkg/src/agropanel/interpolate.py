"""Station-to-point and station-to-grid interpolation.

Three schemes are supported: the value of the nearest station, an
inverse-distance weighted (IDW) mean over the ``k`` nearest stations, and an
IDW mean over every station within a great-circle radius.  The module also
implements the monthly consistency step that "infuses" interpolated daily
layers with a finer monthly reference grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .core import Grid, GridHeader, GridStack, StationTable
from .exceptions import ShapeError, ValidationError
from .geo import KM_PER_DEGREE, haversine_km

log = logging.getLogger(__name__)

METHODS = ("nearest", "knn_idw", "radius_idw")
COINCIDENT_KM = 1e-3
_CHUNK = 2048


@dataclass(frozen=True)
class InterpSpec:
    """Interpolation settings.

    ``radius`` is in degrees of great-circle arc (1 degree ~ 111.195 km);
    ``power`` is the inverse-distance exponent.
    """

    method: str = "knn_idw"
    k: int = 5
    radius: float = 1.0
    power: float = 1.0

    def __post_init__(self):
        _check_params(self.method, self.k, self.radius, self.power)


def _check_params(method, k, radius, power):
    if method not in METHODS:
        raise ValidationError(f"unknown interpolation method {method!r}; expected one of {', '.join(METHODS)}")
    if int(k) != k or k < 1:
        raise ValidationError(f"k must be a positive integer, got {k!r}")
    if not radius > 0:
        raise ValidationError(f"radius must be > 0, got {radius!r}")
    if not power > 0:
        raise ValidationError(f"power must be > 0, got {power!r}")


class IDWInterpolator(RegressorMixin, BaseEstimator):
    """Inverse-distance interpolation of point observations.

    Parameters
    ----------
    method : {'nearest', 'knn_idw', 'radius_idw'}, default='knn_idw'
    k : int, default=5
        Number of neighbours for ``knn_idw``.
    radius : float, default=1.0
        Search radius in degrees of arc for ``radius_idw``.
    power : float, default=1.0
        Exponent applied to distances; weights are ``1 / d**power``.

    Notes
    -----
    ``fit`` takes ``X`` as ``(lat, lon)`` pairs in degrees.  Distances are
    haversine on a 6371 km sphere.  A target within 1 m of a station takes
    that station's value.  Ties in distance are broken by ``station_ids``
    (smallest first), so the result does not depend on input order.
    """

    def __init__(self, method="knn_idw", k=5, radius=1.0, power=1.0):
        self.method = method
        self.k = k
        self.radius = radius
        self.power = power

    def fit(self, X, y, station_ids=None):
        _check_params(self.method, self.k, self.radius, self.power)
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        if X.shape[1] != 2:
            raise ShapeError(f"X must hold (lat, lon) pairs, got {X.shape[1]} columns")
        if station_ids is None:
            order = np.lexsort((y, X[:, 1], X[:, 0]))
            ids = np.arange(len(y)).astype(str)
        else:
            ids = np.asarray(station_ids).astype(str)
            if ids.shape != y.shape:
                raise ShapeError("station_ids must have one entry per station")
            order = np.argsort(ids, kind="mergesort")
        self.coords_ = X[order]
        self.values_ = y[order]
        self.station_ids_ = ids[order]
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        """Interpolated value per target; NaN where no station qualifies."""
        check_is_fitted(self, "values_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 2:
            raise ShapeError(f"X must hold (lat, lon) pairs, got {X.shape[1]} columns")
        out = np.empty(X.shape[0])
        for start in range(0, X.shape[0], _CHUNK):
            block = X[start : start + _CHUNK]
            d = haversine_km(block[:, :1], block[:, 1:], self.coords_[None, :, 0], self.coords_[None, :, 1])
            out[start : start + _CHUNK] = self._combine(d)
        self.n_missing_ = int(np.isnan(out).sum())
        if self.n_missing_:
            log.info("%d of %d targets have no station within %.3g degrees", self.n_missing_, len(out), self.radius)
        return out

    def _combine(self, d):
        n_targets, n_stations = d.shape
        nearest = np.argmin(d, axis=1)  # first minimum = smallest station id
        result = np.full(n_targets, np.nan)
        rows = np.arange(n_targets)
        coincident = d[rows, nearest] < COINCIDENT_KM
        result[coincident] = self.values_[nearest[coincident]]
        todo = ~coincident
        if not todo.any():
            return result
        if self.method == "nearest":
            result[todo] = self.values_[nearest[todo]]
            return result
        dd = d[todo]
        if self.method == "knn_idw":
            k = min(int(self.k), n_stations)
            idx = np.argsort(dd, axis=1, kind="stable")[:, :k]
            dk = np.take_along_axis(dd, idx, axis=1)
            w = dk ** -float(self.power)
            vals = self.values_[idx]
            result[todo] = (w * vals).sum(axis=1) / w.sum(axis=1)
        else:
            inside = dd <= self.radius * KM_PER_DEGREE
            w = np.where(inside, np.where(inside, dd, 1.0) ** -float(self.power), 0.0)
            total = w.sum(axis=1)
            with np.errstate(invalid="ignore", divide="ignore"):
                est = (w * self.values_[None, :]).sum(axis=1) / total
            est[total == 0] = np.nan
            result[todo] = est
        return result


def _fitted_for(stations: StationTable, date, variable, spec: InterpSpec) -> IDWInterpolator:
    sel = stations.select(date, variable)
    if len(sel) == 0:
        raise ValidationError(f"no station observations for {variable} on {date}")
    model = IDWInterpolator(spec.method, spec.k, spec.radius, spec.power)
    return model.fit(sel[["lat", "lon"]].to_numpy(), sel["value"].to_numpy(), station_ids=sel["station_id"].to_numpy())


def interpolate_points(stations: StationTable, targets, date, variable, spec: InterpSpec = InterpSpec()):
    """Interpolate one date/variable at ``targets`` given as ``(lat, lon)`` rows.

    Returns an array with NaN for targets that ``radius_idw`` cannot reach.
    """
    model = _fitted_for(stations, date, variable, spec)
    return model.predict(np.atleast_2d(np.asarray(targets, dtype=np.float64)))


def interpolate_to_grid(stations: StationTable, header: GridHeader, date, variable, spec: InterpSpec = InterpSpec()) -> Grid:
    """Interpolate at every cell center of ``header``; unreachable cells become nodata."""
    if isinstance(header, Grid):
        header = header.header
    lon, lat = header.cell_centers()
    model = _fitted_for(stations, date, variable, spec)
    values = model.predict(np.column_stack([lat, lon]))
    values[np.isnan(values)] = header.nodata
    return Grid.from_header(header, values)


def _month_check(daily: GridStack, reference: Grid):
    if not daily.header.same_geometry(reference.header):
        raise ShapeError("daily stack and reference grid have different geometry")
    months = {label[:7] for label in daily.labels}
    if len(months) != 1:
        raise ValidationError(f"daily layers span several months: {', '.join(sorted(months))}")


def anomaly_infuse_temperature(daily: GridStack, reference_monthly: Grid) -> GridStack:
    """Replace the monthly mean of interpolated daily layers by a reference mean.

    Each cell becomes ``daily_d - mean_d(daily) + reference``, which keeps
    day-to-day anomalies and makes the monthly mean equal the reference.
    Cells missing in the reference or on any day are nodata on every day.
    """
    _month_check(daily, reference_monthly)
    layers = np.array(daily.layers)
    missing = daily.mask.any(axis=0) | reference_monthly.mask
    mean = layers.mean(axis=0)
    out = layers - mean + reference_monthly.values
    out[:, missing] = daily.header.nodata
    return GridStack(daily.header, out, daily.labels)


def ratio_infuse_precipitation(daily: GridStack, reference_monthly_total: Grid, return_flags: bool = False):
    """Rescale daily precipitation so each cell's monthly total matches the reference.

    Cells whose interpolated month is completely dry stay dry (no rain is
    created on days without any) and are flagged.

    Returns
    -------
    stack : GridStack
    flags : ndarray of bool, optional
        True where the daily total was zero; returned when ``return_flags``.
    """
    _month_check(daily, reference_monthly_total)
    missing = daily.mask.any(axis=0) | reference_monthly_total.mask
    layers = np.array(daily.layers)
    if (layers[:, ~missing] < 0).any():
        raise ValidationError("daily precipitation must be non-negative")
    total = layers.sum(axis=0)
    dry = (total == 0) & ~missing
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(total > 0, reference_monthly_total.values / np.where(total > 0, total, 1.0), 0.0)
    out = layers * scale
    out[:, dry] = 0.0
    out[:, missing] = daily.header.nodata
    if dry.any():
        log.info("%d cells have zero interpolated precipitation; kept dry", int(dry.sum()))
    stack = GridStack(daily.header, out, daily.labels)
    return (stack, dry) if return_flags else stack
