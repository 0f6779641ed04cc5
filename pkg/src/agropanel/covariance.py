"""Sandwich covariance estimators for within-transformed OLS.

All estimators share the form ``V = (X'X)^-1 S (X'X)^-1``; they differ in
the "meat" ``S``:

* ``iid``       -- ``s^2 X'X``
* ``hc0/hc1``   -- ``sum_i e_i^2 x_i x_i'`` (hc1 scaled by ``n / (n - J)``)
* ``cluster``   -- ``sum_g (sum_{i in g} e_i x_i)(...)'``
* ``twoway``    -- ``V_A + V_B - V_{A and B}``
* ``conley``    -- kernel-weighted cross-products of same-period
  observations within a distance cutoff, plus optional within-unit serial
  terms.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from .exceptions import ConfigurationError, ShapeError, ValidationError
from .geo import EARTH_RADIUS_KM, KM_PER_MILE, haversine_km

SE_KINDS = ("iid", "hc0", "hc1", "cluster", "twoway_cluster", "conley")
KERNELS = ("bartlett", "uniform")
CUTOFF_500_MILES_KM = 500 * KM_PER_MILE
CUTOFF_1000_MILES_KM = 1000 * KM_PER_MILE


@dataclass(frozen=True)
class SEConfig:
    """Choice of covariance estimator.

    ``cutoff_km`` and ``kernel`` apply to ``conley``; ``time_lags`` adds a
    within-unit Bartlett serial component (0 keeps it purely spatial).
    """

    kind: str = "iid"
    cluster_cols: tuple = ()
    cutoff_km: float = CUTOFF_500_MILES_KM
    kernel: str = "bartlett"
    time_lags: int = 0

    def __post_init__(self):
        if self.kind not in SE_KINDS:
            raise ConfigurationError(f"unknown SE kind {self.kind!r}; expected one of {', '.join(SE_KINDS)}")
        object.__setattr__(self, "cluster_cols", tuple(self.cluster_cols))
        if self.kind == "cluster" and len(self.cluster_cols) != 1:
            raise ConfigurationError("one-way clustering needs exactly one cluster column")
        if self.kind == "twoway_cluster" and len(self.cluster_cols) != 2:
            raise ConfigurationError("two-way clustering needs exactly two cluster columns")
        if not self.cutoff_km > 0:
            raise ConfigurationError(f"cutoff_km must be > 0, got {self.cutoff_km}")
        if self.kernel not in KERNELS:
            raise ConfigurationError(f"unknown kernel {self.kernel!r}")
        if int(self.time_lags) != self.time_lags or self.time_lags < 0:
            raise ConfigurationError(f"time_lags must be a non-negative integer, got {self.time_lags}")

    @classmethod
    def parse(cls, text: str) -> "SEConfig":
        """Parse ``iid | hc0 | hc1 | cluster:COL | twoway:COL1,COL2 | conley:KM[,LAGS]``."""
        text = text.strip()
        head, _, rest = text.partition(":")
        if head in ("iid", "hc0", "hc1") and not rest:
            return cls(head)
        if head == "cluster" and rest:
            return cls("cluster", (rest,))
        if head in ("twoway", "twoway_cluster") and rest:
            cols = tuple(c.strip() for c in rest.split(","))
            return cls("twoway_cluster", cols)
        if head == "conley" and rest:
            parts = rest.split(",")
            try:
                km = float(parts[0])
                lags = int(parts[1]) if len(parts) > 1 else 0
            except ValueError as exc:
                raise ConfigurationError(f"bad conley option {text!r}") from exc
            return cls("conley", cutoff_km=km, time_lags=lags)
        raise ConfigurationError(f"cannot parse SE option {text!r}")

    @property
    def label(self) -> str:
        if self.kind == "cluster":
            return f"cluster:{self.cluster_cols[0]}"
        if self.kind == "twoway_cluster":
            return "twoway:" + ",".join(self.cluster_cols)
        if self.kind == "conley":
            return f"conley:{self.cutoff_km:g}km,{self.kernel},lags={self.time_lags}"
        return self.kind


def bartlett(d, cutoff):
    return np.maximum(0.0, 1.0 - np.asarray(d, dtype=np.float64) / cutoff)


def _kernel(d, cutoff, kernel):
    if kernel == "bartlett":
        return bartlett(d, cutoff)
    return (np.asarray(d) <= cutoff).astype(np.float64)


def _codes(values) -> np.ndarray:
    return pd.factorize(pd.Series(values).astype(str), sort=True)[0]


def _cluster_meat(scores, codes):
    n_groups = codes.max() + 1
    sums = np.zeros((n_groups, scores.shape[1]))
    np.add.at(sums, codes, scores)
    return sums.T @ sums


def _floor_psd(V, what):
    vals, vecs = np.linalg.eigh(V)
    if vals.min() < 0:
        warnings.warn(
            f"{what} covariance is not positive semidefinite (min eigenvalue {vals.min():.3g}); flooring at zero",
            RuntimeWarning,
            stacklevel=3,
        )
        vals = np.maximum(vals, 0.0)
        V = (vecs * vals) @ vecs.T
    return V


def _unit_vectors(lat, lon):
    la, lo = np.radians(lat), np.radians(lon)
    return np.column_stack([np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo), np.sin(la)])


def conley_meat(scores, lat, lon, time, unit, cutoff_km, kernel="bartlett", time_lags=0):
    """Spatial (and optionally serial) HAC meat matrix.

    Parameters
    ----------
    scores : ndarray, shape (n, J)
        Rows ``e_i * x_i``.
    lat, lon : ndarray, shape (n,)
        Coordinates of each observation's unit, in degrees.
    time, unit : array_like, shape (n,)
        Period and unit identifiers.
    """
    scores = np.asarray(scores, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if not (np.isfinite(lat).all() and np.isfinite(lon).all()):
        raise ConfigurationError("conley standard errors need a centroid for every observation")
    S = scores.T @ scores
    chord = 2.0 * np.sin(min(cutoff_km / (2.0 * EARTH_RADIUS_KM), np.pi / 2)) * (1 + 1e-9)
    time_codes = _codes(time)
    xyz = _unit_vectors(lat, lon)
    for t in range(time_codes.max() + 1):
        rows = np.flatnonzero(time_codes == t)
        if rows.size < 2:
            continue
        pairs = cKDTree(xyz[rows]).query_pairs(chord, output_type="ndarray")
        if pairs.size == 0:
            continue
        i, j = rows[pairs[:, 0]], rows[pairs[:, 1]]
        d = haversine_km(lat[i], lon[i], lat[j], lon[j])
        w = _kernel(d, cutoff_km, kernel)
        keep = w > 0
        if keep.any():
            M = scores[i[keep]].T @ (w[keep, None] * scores[j[keep]])
            S += M + M.T
    if time_lags:
        frame = pd.DataFrame({"unit": _codes(unit), "time": np.asarray(time), "row": np.arange(len(lat))})
        frame = frame.sort_values(["unit", "time"], kind="mergesort")
        t_rank = frame.groupby("unit")["time"].rank(method="first").to_numpy() - 1
        frame["pos"] = t_rank.astype(int)
        keyed = frame.set_index(["unit", "pos"])["row"]
        for lag in range(1, int(time_lags) + 1):
            weight = 1.0 - lag / (time_lags + 1.0)
            lagged = frame.assign(pos=frame["pos"] - lag)
            idx = pd.MultiIndex.from_frame(lagged[["unit", "pos"]])
            prev = keyed.reindex(idx).to_numpy()
            ok = ~pd.isna(prev)
            if not ok.any():
                continue
            a = frame["row"].to_numpy()[ok]
            b = prev[ok].astype(int)
            M = scores[a].T @ scores[b]
            S += weight * (M + M.T)
    return S


def sandwich_se(Xd, e, config: SEConfig = SEConfig(), frame: pd.DataFrame | None = None, dof: int | None = None):
    """Covariance of OLS coefficients on demeaned regressors.

    Parameters
    ----------
    Xd : ndarray, shape (n, J)
        Regressors after absorbing fixed effects (and scaling by the square
        root of any regression weights).
    e : ndarray, shape (n,)
        Residuals on the same scale.
    config : SEConfig
    frame : DataFrame, optional
        One row per observation with the cluster columns, and for ``conley``
        the columns ``lat``, ``lon``, ``year`` and ``unit_id``.
    dof : int, optional
        Residual degrees of freedom for ``iid``; defaults to ``n - J``.

    Returns
    -------
    V : ndarray, shape (J, J)
        Symmetric; two-way results are floored to PSD with a warning.
    """
    X = np.asarray(Xd, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != e.size:
        raise ShapeError(f"regressors {X.shape} and residuals {e.shape} do not conform")
    n, J = X.shape
    bread = np.linalg.inv(X.T @ X)
    scores = X * e[:, None]
    kind = config.kind
    if kind == "iid":
        dof = n - J if dof is None else dof
        if dof <= 0:
            raise ValidationError("no residual degrees of freedom left for the iid variance")
        V = (e @ e / dof) * bread
    elif kind in ("hc0", "hc1"):
        S = scores.T @ scores
        V = bread @ S @ bread
        if kind == "hc1":
            V = V * (n / (n - J))
    elif kind in ("cluster", "twoway_cluster"):
        if frame is None:
            raise ConfigurationError("clustered standard errors need the cluster columns")
        for col in config.cluster_cols:
            if col not in frame.columns:
                raise ConfigurationError(f"cluster column {col!r} not found")
            if frame[col].nunique() < 2:
                warnings.warn(f"cluster column {col!r} has a single level", RuntimeWarning, stacklevel=2)
        if kind == "cluster":
            S = _cluster_meat(scores, _codes(frame[config.cluster_cols[0]]))
            V = bread @ S @ bread
        else:
            a, b = config.cluster_cols
            ca, cb = _codes(frame[a]), _codes(frame[b])
            cab = _codes(frame[a].astype(str) + "\x1f" + frame[b].astype(str))
            S = _cluster_meat(scores, ca) + _cluster_meat(scores, cb) - _cluster_meat(scores, cab)
            V = bread @ S @ bread
            V = _floor_psd((V + V.T) / 2.0, "two-way clustered")
    else:
        if frame is None or not {"lat", "lon"}.issubset(frame.columns):
            raise ConfigurationError("conley standard errors need unit centroids (lat, lon)")
        time = frame["year"].to_numpy() if "year" in frame else np.zeros(n)
        unit = frame["unit_id"].to_numpy() if "unit_id" in frame else np.arange(n)
        S = conley_meat(
            scores, frame["lat"].to_numpy(), frame["lon"].to_numpy(), time, unit,
            config.cutoff_km, config.kernel, config.time_lags,
        )
        V = bread @ S @ bread
    return (V + V.T) / 2.0
