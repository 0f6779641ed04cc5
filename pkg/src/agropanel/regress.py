"""Panel regression with absorbed fixed effects.

The estimator demeans the outcome and every regressor within each
fixed-effect category by alternating projections, then runs OLS on the
demeaned data.  By the Frisch-Waugh-Lovell theorem the coefficients and
residuals equal those of a regression with explicit dummy variables.

Model families provided as builders:

* quadratic (or cubic) in seasonal temperature and precipitation,
* exposure bins reduced through a basis matrix,
* cross-sectional regressions on 30-year climate normals,
* a hybrid of normals and squared deviations from them,
* long differences between two multi-year periods.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.linalg import qr, solve_triangular
from scipy.sparse.csgraph import connected_components
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .basis import BasisMatrix, ResponseCurve, recover_curve
from .core import PanelTable
from .covariance import SEConfig, sandwich_se
from .exceptions import ConvergenceError, RankError, ShapeError, ValidationError, WindowError
from .thermal import shift_bins

log = logging.getLogger(__name__)

TRENDS = ("none", "pooled_linear", "pooled_quadratic", "by_region_linear", "by_region_quadratic")
ABSORB_TOL = 1e-10
MAX_SWEEPS = 10_000
COLLINEAR_TOL = 1e-9
_ALIASES = {"unit": "unit_id", "time": "year", "t": "year"}


def _fe_name(token: str) -> str:
    return ":".join(_ALIASES.get(p.strip(), p.strip()) for p in token.split(":"))


@dataclass(frozen=True)
class ModelSpec:
    """Description of one regression.

    Parameters
    ----------
    outcome : str
        Outcome column; ``log_outcome`` applies the natural log.
    regressors : tuple of str
        Columns used as they are (controls, precomputed terms).
    terms : tuple of (name, source, power)
        Polynomial terms ``source ** power`` added under ``name``.
    basis : BasisMatrix, optional
        Reduces the exposure columns ``basis_columns`` to ``basis.J``
        regressors named ``f"{basis_prefix}{j}"``.
    fixed_effects : tuple of str
        Absorbed categories.  ``"unit"`` means ``unit_id``; ``"a:b"`` is
        the interaction of two columns (e.g. ``"state:year"``).
    trends : str
        One of ``none``, ``pooled_linear``, ``pooled_quadratic``,
        ``by_region_linear``, ``by_region_quadratic``; regional trends use
        the column ``region``.
    weights : str, optional
        Column of regression weights (weighted least squares).
    intercept : bool, optional
        Only used without fixed effects; ``None`` means add one.
    temperature : str, optional
        Source column that a warming scenario shifts for polynomial terms.
    weather : tuple of str, optional
        Columns reshuffled across units by placebo tests; defaults to the
        sources of ``terms`` plus ``basis_columns``.
    """

    outcome: str = "y"
    regressors: tuple = ()
    terms: tuple = ()
    basis: BasisMatrix | None = None
    basis_columns: tuple = ()
    basis_prefix: str = "b"
    fixed_effects: tuple = ("unit_id",)
    trends: str = "none"
    region: str = "state"
    weights: str | None = None
    log_outcome: bool = False
    intercept: bool | None = None
    temperature: str | None = None
    weather: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "regressors", tuple(self.regressors))
        object.__setattr__(self, "terms", tuple(tuple(t) for t in self.terms))
        object.__setattr__(self, "basis_columns", tuple(self.basis_columns))
        object.__setattr__(self, "fixed_effects", tuple(_fe_name(f) for f in self.fixed_effects))
        if self.weather is not None:
            object.__setattr__(self, "weather", tuple(self.weather))
        if self.trends not in TRENDS:
            raise ValidationError(f"unknown trend option {self.trends!r}; expected one of {', '.join(TRENDS)}")
        if self.basis is not None and len(self.basis_columns) != self.basis.K:
            raise ShapeError(f"basis has {self.basis.K} rows but {len(self.basis_columns)} exposure columns were named")
        if self.basis is None and self.basis_columns:
            raise ValidationError("basis_columns given without a basis")
        for term in self.terms:
            if len(term) != 3 or int(term[2]) != term[2] or term[2] < 1:
                raise ValidationError(f"bad polynomial term {term!r}")
        if not self.design_names:
            raise ValidationError("a model needs at least one regressor")
        if len(set(self.design_names)) != len(self.design_names):
            raise ValidationError("regressor names must be unique")

    @property
    def basis_names(self) -> list[str]:
        return [f"{self.basis_prefix}{j}" for j in range(self.basis.J)] if self.basis is not None else []

    @property
    def design_names(self) -> list[str]:
        return [t[0] for t in self.terms] + self.basis_names + list(self.regressors)

    @property
    def weather_columns(self) -> list[str]:
        if self.weather is not None:
            return list(self.weather)
        cols = list(dict.fromkeys(t[1] for t in self.terms))
        return cols + [c for c in self.basis_columns if c not in cols]

    @property
    def has_intercept(self) -> bool:
        if self.fixed_effects:
            return False
        return True if self.intercept is None else bool(self.intercept)

    def required_columns(self) -> list[str]:
        cols = [self.outcome, *dict.fromkeys(t[1] for t in self.terms), *self.basis_columns, *self.regressors]
        for fe in self.fixed_effects:
            cols.extend(fe.split(":"))
        if self.trends.startswith("by_region"):
            cols.append(self.region)
        if self.trends != "none":
            cols.append("year")
        if self.weights:
            cols.append(self.weights)
        return list(dict.fromkeys(cols))


# ---------------------------------------------------------------------------
# absorption


def _group_codes(frame: pd.DataFrame, fe: str) -> np.ndarray:
    parts = fe.split(":")
    if len(parts) == 1:
        return pd.factorize(frame[parts[0]], sort=True)[0]
    key = frame[parts[0]].astype(str)
    for p in parts[1:]:
        key = key + "\x1f" + frame[p].astype(str)
    return pd.factorize(key, sort=True)[0]


def _nested(a: np.ndarray, b: np.ndarray) -> bool:
    """True when every group of ``a`` lies inside a single group of ``b``."""
    pairs = pd.DataFrame({"a": a, "b": b}).drop_duplicates()
    return len(pairs) == a.max() + 1


def absorbed_rank(codes: list[np.ndarray]) -> int:
    """Number of linearly independent dummy columns spanned by the categories.

    Categories nested inside another category are redundant and removed
    first.  Two remaining categories lose one dimension per connected
    component of their bipartite graph; beyond two, one dimension per extra
    category is subtracted, which is exact for the usual crossed designs.
    """
    if not codes:
        return 0
    keep = list(codes)
    changed = True
    while changed and len(keep) > 1:
        changed = False
        for i in range(len(keep)):
            for j in range(len(keep)):
                if i != j and _nested(keep[i], keep[j]):
                    del keep[j]
                    changed = True
                    break
            if changed:
                break
    sizes = [int(c.max()) + 1 for c in keep]
    if len(keep) == 1:
        return sizes[0]
    a, b = keep[0], keep[1]
    n = a.size
    graph = sp.coo_matrix((np.ones(n), (a, b + sizes[0])), shape=(sizes[0] + sizes[1],) * 2)
    n_comp = connected_components(graph, directed=False)[0]
    return sum(sizes) - n_comp - (len(keep) - 2)


class Absorber:
    """Demean columns within several categorical partitions at once.

    Parameters
    ----------
    codes : list of ndarray of int
        One integer code vector per category, each of length ``n``.
    weights : ndarray, optional
        Observation weights; means become weighted means.
    tol : float
        Convergence threshold on the largest remaining category mean,
        relative to ``max(1, max |column|)``.
    max_sweeps : int
        Sweep cap before :class:`ConvergenceError` is raised.
    """

    def __init__(self, codes, weights=None, tol=ABSORB_TOL, max_sweeps=MAX_SWEEPS):
        self.codes = [np.asarray(c, dtype=np.int64) for c in codes]
        n = self.codes[0].size if self.codes else 0
        self.weights = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
        self.tol = tol
        self.max_sweeps = int(max_sweeps)
        self._indicators = []
        for c in self.codes:
            G = int(c.max()) + 1
            D = sp.csr_matrix((np.ones(n), (np.arange(n), c)), shape=(n, G))
            mass = np.bincount(c, weights=self.weights, minlength=G)
            self._indicators.append((D, D.T.multiply(self.weights).tocsr(), mass))
        self.sweeps_ = 0

    def _means(self, k, M):
        D, DtW, mass = self._indicators[k]
        return (DtW @ M) / mass[:, None]

    def transform(self, M) -> np.ndarray:
        M = np.array(M, dtype=np.float64, copy=True)
        squeeze = M.ndim == 1
        if squeeze:
            M = M[:, None]
        if not self.codes:
            return M[:, 0] if squeeze else M
        scale = np.maximum(1.0, np.abs(M).max(axis=0)) if M.size else np.ones(M.shape[1])
        limit = self.tol * scale
        n_cat = len(self.codes)
        worst = np.inf
        for sweep in range(1, self.max_sweeps + 1):
            for k in range(n_cat):
                D = self._indicators[k][0]
                M -= D @ self._means(k, M)
            if n_cat == 1:
                self.sweeps_ = sweep
                break
            # the last category was just projected out; check the others
            worst = max(np.max(np.abs(self._means(k, M)) / limit) for k in range(n_cat - 1)) if M.size else 0.0
            if worst < 1.0:
                self.sweeps_ = sweep
                break
        else:
            raise ConvergenceError(
                f"fixed-effect demeaning did not converge in {self.max_sweeps} sweeps "
                f"(largest remaining category mean is {worst:.3g} x tolerance)"
            )
        return M[:, 0] if squeeze else M


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True, eq=False)
class FitResult:
    """Coefficients, covariance and diagnostics of one within regression.

    ``demeaned`` and ``resid_scaled`` hold the demeaned regressors and
    residuals (times the square root of any weights) so the covariance can
    be recomputed with another estimator via :meth:`with_se`.  ``frame``
    holds the rows used in estimation.
    """

    names: tuple
    gamma: np.ndarray
    vcov: np.ndarray
    residuals: np.ndarray
    dof: int
    r2: float
    adj_r2: float
    within_r2: float
    n_obs: int
    se_type: str
    n_absorbed: int
    sweeps: int
    demeaned: np.ndarray = field(repr=False)
    resid_scaled: np.ndarray = field(repr=False)
    frame: pd.DataFrame = field(repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.vcov), 0.0))

    def index(self, names) -> np.ndarray:
        pos = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in pos]
        if missing:
            raise ValidationError(f"coefficients not in the fit: {', '.join(missing)}")
        return np.array([pos[n] for n in names], dtype=int)

    def coef(self, name: str) -> float:
        return float(self.gamma[self.index([name])[0]])

    def subset(self, names):
        idx = self.index(names)
        return self.gamma[idx], self.vcov[np.ix_(idx, idx)]

    def curve(self, spec: ModelSpec) -> ResponseCurve:
        """Per-bin response implied by the basis coefficients of ``spec``."""
        if spec.basis is None:
            raise ValidationError("the model has no exposure basis")
        g, V = self.subset(spec.basis_names)
        return recover_curve(g, V, spec.basis)

    def with_se(self, config, centroids=None) -> "FitResult":
        config = SEConfig.parse(config) if isinstance(config, str) else config
        frame = _se_frame(self.frame, config, centroids)
        V = sandwich_se(self.demeaned, self.resid_scaled, config, frame, dof=self.dof)
        return replace(self, vcov=V, se_type=config.label)

    def orthogonality(self) -> float:
        """``max |X'e| / n`` on the demeaned design (0 up to rounding)."""
        return float(np.abs(self.demeaned.T @ self.resid_scaled).max() / self.n_obs)

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "gamma": self.gamma.tolist(),
            "vcov": self.vcov.tolist(),
            "se": self.se.tolist(),
            "se_type": self.se_type,
            "n_obs": self.n_obs,
            "dof": self.dof,
            "n_absorbed": self.n_absorbed,
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "within_r2": self.within_r2,
            "sweeps": self.sweeps,
        }


def _se_frame(frame: pd.DataFrame, config: SEConfig, centroids):
    if config.kind != "conley":
        return frame
    if {"lat", "lon"}.issubset(frame.columns):
        return frame
    if centroids is None:
        raise ValidationError("conley standard errors need unit centroids")
    if isinstance(centroids, dict):
        centroids = pd.DataFrame(
            [(k, v[0], v[1]) for k, v in centroids.items()], columns=["unit_id", "lat", "lon"]
        )
    cent = centroids[["unit_id", "lat", "lon"]].assign(unit_id=lambda d: d["unit_id"].astype(str))
    merged = frame[["unit_id", "year"]].merge(cent, on="unit_id", how="left")
    if merged[["lat", "lon"]].isna().any().any():
        missing = merged.loc[merged["lat"].isna(), "unit_id"].iloc[0]
        raise ValidationError(f"no centroid for unit {missing}")
    return merged


def _check_columns(X: np.ndarray, Xd: np.ndarray, names):
    """Raise :class:`RankError` naming the first problematic regressor."""
    raw = np.sqrt((X ** 2).sum(axis=0))
    dem = np.sqrt((Xd ** 2).sum(axis=0))
    for j, name in enumerate(names):
        if dem[j] <= COLLINEAR_TOL * max(raw[j], 1e-300) or dem[j] == 0.0:
            raise RankError(f"regressor {name!r} is constant within the absorbed fixed effects", column=name)
    Xn = Xd / dem
    R = qr(Xn, mode="r")[0]
    diag = np.abs(np.diag(R))
    for j, name in enumerate(names):
        if diag[j] <= COLLINEAR_TOL * 10:
            raise RankError(f"regressor {name!r} is collinear with earlier regressors; dropped", column=name)


def within_ols(y, X, codes, names, weights=None, frame=None, se=SEConfig(), centroids=None,
               tol=ABSORB_TOL, max_sweeps=MAX_SWEEPS) -> FitResult:
    """OLS of ``y`` on ``X`` after absorbing the categories in ``codes``.

    Parameters
    ----------
    y : ndarray, shape (n,)
    X : ndarray, shape (n, J)
    codes : list of ndarray
        Integer category codes, one vector per absorbed effect.
    names : sequence of str
    weights : ndarray, optional
    frame : DataFrame, optional
        Row-aligned identifiers used by clustered and spatial covariances.
    """
    y = np.asarray(y, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    n, J = X.shape
    names = tuple(names)
    if len(names) != J:
        raise ShapeError(f"{J} regressors but {len(names)} names")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if (w <= 0).any() or not np.isfinite(w).all():
        raise ValidationError("regression weights must be positive and finite")
    n_absorbed = absorbed_rank(codes)
    dof = n - J - n_absorbed
    if dof < 1:
        raise ValidationError(
            f"{n} observations are too few for {J} regressors and {n_absorbed} absorbed effects"
        )
    absorber = Absorber(codes, w, tol=tol, max_sweeps=max_sweeps)
    demeaned = absorber.transform(np.column_stack([y, X]))
    yd, Xd = demeaned[:, 0], demeaned[:, 1:]
    _check_columns(X, Xd, names)
    sw = np.sqrt(w)
    Xs, ys = Xd * sw[:, None], yd * sw
    Q, R = np.linalg.qr(Xs)
    gamma = solve_triangular(R, Q.T @ ys)
    resid = yd - Xd @ gamma
    es = resid * sw

    ss_res = float(es @ es)
    if codes:
        ybar = np.sum(w * y) / np.sum(w)
        ss_tot = float(np.sum(w * (y - ybar) ** 2))
    else:
        ss_tot = float(np.sum(w * y ** 2))
    ss_within = float(ys @ ys)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else np.nan
    within_r2 = 1.0 - ss_res / ss_within if ss_within > 0 else np.nan
    if codes:
        adj = 1.0 - (1.0 - r2) * (n - 1) / dof
    else:
        adj = 1.0 - (1.0 - r2) * n / dof

    if frame is None:
        frame = pd.DataFrame(index=np.arange(n))
    se = SEConfig.parse(se) if isinstance(se, str) else se
    V = sandwich_se(Xs, es, se, _se_frame(frame, se, centroids), dof=dof)
    return FitResult(
        names=names, gamma=gamma, vcov=V, residuals=resid, dof=dof, r2=r2, adj_r2=adj,
        within_r2=within_r2, n_obs=n, se_type=se.label, n_absorbed=n_absorbed,
        sweeps=absorber.sweeps_, demeaned=Xs, resid_scaled=es, frame=frame.reset_index(drop=True),
    )


# ---------------------------------------------------------------------------
# design construction


def _trend_columns(frame: pd.DataFrame, spec: ModelSpec) -> dict:
    if spec.trends == "none":
        return {}
    years = frame["year"].to_numpy(dtype=np.float64)
    t = years - years.mean()
    powers = (1, 2) if spec.trends.endswith("quadratic") else (1,)
    cols = {}
    if spec.trends.startswith("pooled"):
        for p in powers:
            cols[f"trend{p}"] = t ** p
    else:
        region = frame[spec.region].astype(str).to_numpy()
        for r in sorted(set(region)):
            on = (region == r).astype(np.float64)
            for p in powers:
                cols[f"trend{p}:{spec.region}={r}"] = on * t ** p
    return cols


def design_columns(spec: ModelSpec, source, frame: pd.DataFrame) -> dict:
    """Regressor arrays keyed by name.

    ``source`` maps weather and regressor column names to arrays (a frame
    works); trend columns come from ``frame``.  Placebo tests pass permuted
    weather through ``source`` while keeping ``frame`` fixed.
    """
    def get(col):
        return np.asarray(source[col], dtype=np.float64)

    cols = {}
    for name, src, power in spec.terms:
        cols[name] = get(src) ** int(power)
    if spec.basis is not None:
        Z = np.column_stack([get(c) for c in spec.basis_columns])
        Xb = Z @ spec.basis.values
        for j, name in enumerate(spec.basis_names):
            cols[name] = Xb[:, j]
    for name in spec.regressors:
        cols[name] = get(name)
    cols.update(_trend_columns(frame, spec))
    return cols


def design(panel: PanelTable | pd.DataFrame, spec: ModelSpec):
    """Outcome, regressor matrix and the rows used.

    Rows with a missing value in any needed column are dropped (logged).

    Returns
    -------
    y : ndarray
    X : DataFrame
        Columns ``spec.design_names`` followed by trend columns.
    frame : DataFrame
        The rows used, in panel order.
    """
    frame = panel.frame if isinstance(panel, PanelTable) else panel
    missing = [c for c in spec.required_columns() if c not in frame.columns]
    if missing:
        raise ValidationError(f"panel lacks column(s): {', '.join(missing)}")
    needed = spec.required_columns()
    ok = frame[needed].notna().all(axis=1)
    if not ok.all():
        log.warning("dropping %d rows with missing values", int((~ok).sum()))
    frame = frame[ok].reset_index(drop=True)
    if frame.empty:
        raise ValidationError("no complete rows for this model")
    y = frame[spec.outcome].to_numpy(dtype=np.float64)
    if spec.log_outcome:
        bad = y <= 0
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            who = f"unit {frame['unit_id'].iloc[i]}, year {frame['year'].iloc[i]}" if "unit_id" in frame else f"row {i}"
            raise ValidationError(f"log outcome needs positive values; {spec.outcome}={y[i]!r} at {who}")
        y = np.log(y)
    cols = design_columns(spec, frame, frame)
    return y, pd.DataFrame(cols), frame


def _codes_for(frame: pd.DataFrame, spec: ModelSpec) -> list[np.ndarray]:
    codes = [_group_codes(frame, fe) for fe in spec.fixed_effects]
    if spec.has_intercept:
        codes.append(np.zeros(len(frame), dtype=np.int64))
    return codes


def fit_within(panel: PanelTable, spec: ModelSpec, se="iid", centroids=None,
               tol=ABSORB_TOL, max_sweeps=MAX_SWEEPS) -> FitResult:
    """Estimate ``spec`` on ``panel`` with absorbed fixed effects.

    Parameters
    ----------
    panel : PanelTable
    spec : ModelSpec
    se : str or SEConfig
        Covariance estimator, e.g. ``"cluster:state"`` or ``"conley:804.67"``.
    centroids : DataFrame or dict, optional
        ``unit_id, lat, lon`` for spatial covariances.
    """
    y, X, frame = design(panel, spec)
    w = frame[spec.weights].to_numpy(dtype=np.float64) if spec.weights else None
    return within_ols(y, X.to_numpy(), _codes_for(frame, spec), list(X.columns), w, frame, se, centroids, tol, max_sweeps)


class WithinRegressor(RegressorMixin, BaseEstimator):
    """Linear regression with absorbed categorical effects.

    Parameters
    ----------
    se : str, default='iid'
        Covariance estimator (see :meth:`agropanel.covariance.SEConfig.parse`).
    tol : float, default=1e-10
    max_sweeps : int, default=10000

    Notes
    -----
    ``fit(X, y, groups=...)`` takes ``groups`` as an ``(n, m)`` array or
    frame with one column per absorbed category.  Cluster columns for
    clustered covariances are looked up in ``groups`` by name.  With no
    groups an intercept is absorbed instead.  ``predict`` adds the
    estimated category effects when ``groups`` is given.
    """

    def __init__(self, se="iid", tol=ABSORB_TOL, max_sweeps=MAX_SWEEPS):
        self.se = se
        self.tol = tol
        self.max_sweeps = max_sweeps

    @staticmethod
    def _groups_frame(groups, n):
        if groups is None:
            return pd.DataFrame(index=np.arange(n))
        if isinstance(groups, pd.DataFrame):
            g = groups.reset_index(drop=True)
        elif isinstance(groups, pd.Series):
            g = groups.to_frame().reset_index(drop=True)
        else:
            arr = np.asarray(groups)
            g = pd.DataFrame(arr.reshape(n, -1))
            g.columns = [f"g{i}" for i in range(g.shape[1])]
        if len(g) != n:
            raise ShapeError(f"groups has {len(g)} rows, X has {n}")
        return g

    def fit(self, X, y, groups=None, sample_weight=None):
        if isinstance(X, pd.DataFrame):
            names = [str(c) for c in X.columns]
            self.feature_names_in_ = np.asarray(names, dtype=object)
        Xa = np.asarray(X, dtype=np.float64)
        if Xa.ndim == 1:
            Xa = Xa[:, None]
        ya = np.asarray(y, dtype=np.float64).ravel()
        if ya.size != Xa.shape[0]:
            raise ShapeError(f"X has {Xa.shape[0]} rows, y has {ya.size}")
        if not isinstance(X, pd.DataFrame):
            names = [f"x{j}" for j in range(Xa.shape[1])]
        g = self._groups_frame(groups, Xa.shape[0])
        codes, levels = [], []
        for col in g.columns:
            c, lv = pd.factorize(g[col], sort=True)
            codes.append(c)
            levels.append(lv)
        intercept = not codes
        if intercept:
            codes = [np.zeros(Xa.shape[0], dtype=np.int64)]
            levels = [pd.Index([0])]
        self.result_ = within_ols(ya, Xa, codes, names, sample_weight, g, self.se, None, self.tol, self.max_sweeps)
        self.coef_ = self.result_.gamma
        self.n_features_in_ = Xa.shape[1]
        self._intercept_only = intercept
        self.effects_ = self._effects(ya - Xa @ self.coef_, codes, levels, sample_weight)
        self.intercept_ = float(self.effects_[0].iloc[0]) if intercept else 0.0
        return self

    def _effects(self, r, codes, levels, weights):
        """Category effects solving the normal equations for ``r`` by sweeping."""
        w = np.ones(r.size) if weights is None else np.asarray(weights, dtype=np.float64)
        alphas = [np.zeros(len(lv)) for lv in levels]
        masses = [np.bincount(c, weights=w, minlength=len(lv)) for c, lv in zip(codes, levels)]
        scale = max(1.0, np.abs(r).max())
        for _ in range(int(self.max_sweeps)):
            change = 0.0
            for d, c in enumerate(codes):
                other = sum((alphas[e][codes[e]] for e in range(len(codes)) if e != d), np.zeros(r.size))
                new = np.bincount(c, weights=w * (r - other), minlength=len(alphas[d])) / masses[d]
                change = max(change, np.abs(new - alphas[d]).max())
                alphas[d] = new
            if change < self.tol * scale:
                break
        return [pd.Series(a, index=lv) for a, lv in zip(alphas, levels)]

    def predict(self, X, groups=None):
        check_is_fitted(self, "coef_")
        Xa = np.asarray(X, dtype=np.float64)
        if Xa.ndim == 1:
            Xa = Xa[:, None]
        if Xa.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {Xa.shape[1]} columns, model was fit with {self.n_features_in_}")
        pred = Xa @ self.coef_
        if self._intercept_only:
            return pred + self.intercept_
        if groups is None:
            return pred
        g = self._groups_frame(groups, Xa.shape[0])
        if g.shape[1] != len(self.effects_):
            raise ShapeError(f"groups has {g.shape[1]} columns, model has {len(self.effects_)} categories")
        for col, eff in zip(g.columns, self.effects_):
            vals = eff.reindex(pd.Index(g[col])).to_numpy()
            if np.isnan(vals).any():
                raise ValidationError(f"unseen level in group column {col!r}")
            pred = pred + vals
        return pred

    def score(self, X, y, groups=None, sample_weight=None):
        from sklearn.metrics import r2_score

        return r2_score(y, self.predict(X, groups), sample_weight=sample_weight)


# ---------------------------------------------------------------------------
# specification builders


def build_spec_quadratic(temperature="tmean", precipitation="ppt", degree=2, include_precip=True,
                         fixed_effects=("unit_id",), trends="by_region_quadratic", region="state",
                         log_outcome=False, outcome="y", weights=None, controls=(), panel=None) -> ModelSpec:
    """Polynomial in seasonal temperature (and precipitation).

    ``degree=2`` gives ``T, T^2, P, P^2``; ``degree=3`` adds the cubes.
    If ``panel`` is given, the source columns are checked to exist.
    """
    if degree not in (2, 3):
        raise ValidationError(f"polynomial degree must be 2 or 3, got {degree}")
    sources = [temperature] + ([precipitation] if include_precip else [])
    if panel is not None:
        frame = panel.frame if isinstance(panel, PanelTable) else panel
        missing = [c for c in sources if c not in frame.columns]
        if missing:
            raise ValidationError(f"panel lacks column(s): {', '.join(missing)}")
    terms = [(src if p == 1 else f"{src}^{p}", src, p) for src in sources for p in range(1, degree + 1)]
    return ModelSpec(
        outcome=outcome, regressors=tuple(controls), terms=tuple(terms), fixed_effects=tuple(fixed_effects),
        trends=trends, region=region, weights=weights, log_outcome=log_outcome, temperature=temperature,
    )


def build_spec_bins(basis: BasisMatrix, bin_columns, precipitation=None, fixed_effects=("unit_id",),
                    trends="none", region="state", log_outcome=False, outcome="y", controls=(), prefix="b") -> ModelSpec:
    """Exposure bins reduced through ``basis``, optionally with ``P`` and ``P^2``."""
    terms = ()
    if precipitation:
        terms = ((precipitation, precipitation, 1), (f"{precipitation}^2", precipitation, 2))
    return ModelSpec(
        outcome=outcome, regressors=tuple(controls), terms=terms, basis=basis, basis_columns=tuple(bin_columns),
        basis_prefix=prefix, fixed_effects=tuple(fixed_effects), trends=trends, region=region,
        log_outcome=log_outcome,
    )


def climate_normals(weather: pd.DataFrame, column: str, years=None, window: int = 30) -> pd.DataFrame:
    """Mean of ``column`` over the ``window`` years before each year.

    Parameters
    ----------
    weather : DataFrame
        ``unit_id, year, column`` with one row per unit-year.
    years : iterable of int, optional
        Years requested for every unit.  Without it, every unit-year with
        a complete history is returned.

    Returns
    -------
    DataFrame with ``unit_id, year, f"{column}_normal"``.
    """
    if window < 1:
        raise ValidationError("window must be >= 1")
    frame = weather[["unit_id", "year", column]].copy()
    frame["unit_id"] = frame["unit_id"].astype(str)
    dup = frame.duplicated(["unit_id", "year"], keep=False)
    if dup.any():
        row = frame[dup].iloc[0]
        raise ValidationError(f"duplicate weather year (unit_id={row['unit_id']}, year={row['year']})")
    wide = frame.pivot(index="year", columns="unit_id", values=column)
    lo = int(wide.index.min())
    hi = int(wide.index.max()) + 1
    if years is not None:
        years = sorted({int(y) for y in years})
        hi = max(hi, years[-1])
        lo = min(lo, years[0] - window)
    wide = wide.reindex(range(lo, hi + 1))
    normals = wide.shift(1).rolling(window, min_periods=window).mean()
    name = f"{column}_normal"
    long = normals.stack(future_stack=True).rename(name).reset_index()
    long = long[["unit_id", "year", name]]
    if years is None:
        return long.dropna().sort_values(["unit_id", "year"], kind="mergesort").reset_index(drop=True)
    out = long[long["year"].isin(years)].sort_values(["unit_id", "year"], kind="mergesort")
    bad = out[out[name].isna()]
    if not bad.empty:
        u, t = bad.iloc[0]["unit_id"], int(bad.iloc[0]["year"])
        raise WindowError(f"unit {u} lacks {window} years of {column} before {t}")
    return out.reset_index(drop=True)


def build_spec_ricardian(cross_section: PanelTable, normals: pd.DataFrame, variables=None,
                         controls=(), log_outcome=False, outcome="y"):
    """Regression of the outcome on climate normals and their squares.

    Each variable ``v`` in ``normals`` (columns ``f"{v}_normal"``) enters
    linearly and squared.  Pooled cross-sections get year effects; a
    single year gets an intercept.

    Returns
    -------
    panel : PanelTable
        ``cross_section`` joined with the normals.
    spec : ModelSpec
    """
    names = [c for c in normals.columns if c.endswith("_normal")]
    if variables is not None:
        names = [f"{v}_normal" for v in variables]
        missing = [c for c in names if c not in normals.columns]
        if missing:
            raise ValidationError(f"normals lack column(s): {', '.join(missing)}")
    if not names:
        raise ValidationError("no climate normal columns given")
    right = normals[["unit_id", "year", *names]].assign(unit_id=lambda d: d["unit_id"].astype(str))
    merged = cross_section.frame.merge(right, on=["unit_id", "year"], how="left")
    gaps = merged[names].isna().any(axis=1)
    if gaps.any():
        row = merged[gaps].iloc[0]
        raise WindowError(f"no climate normal for unit {row['unit_id']}, year {row['year']}")
    terms = []
    for c in names:
        terms += [(c, c, 1), (f"{c}^2", c, 2)]
    fe = ("year",) if merged["year"].nunique() > 1 else ()
    spec = ModelSpec(outcome=outcome, regressors=tuple(controls), terms=tuple(terms), fixed_effects=fe,
                     log_outcome=log_outcome, weather=tuple(names))
    return PanelTable(merged), spec


def build_spec_hybrid(panel: PanelTable, weather: pd.DataFrame, variable: str, window: int = 30,
                      region: str = "unit_id", trends: str = "by_region_linear", controls=(),
                      log_outcome=False, outcome="y"):
    """Climate normal, its square, and the squared deviation of weather from it.

    Adds columns ``f"{v}_clim"``, ``f"{v}_clim^2"`` and ``f"{v}_anom^2"``
    where the normal is the mean over the ``window`` preceding years, with
    fixed effects and trends by ``region``.

    Returns
    -------
    panel : PanelTable
    spec : ModelSpec
    """
    frame = panel.frame
    normals = climate_normals(weather, variable, years=frame["year"].unique(), window=window)
    current = weather[["unit_id", "year", variable]].assign(unit_id=lambda d: d["unit_id"].astype(str))
    cols = [c for c in frame.columns if c not in (variable, f"{variable}_normal")]
    merged = frame[cols].merge(current, on=["unit_id", "year"], how="left").merge(
        normals, on=["unit_id", "year"], how="left"
    )
    gaps = merged[[variable, f"{variable}_normal"]].isna().any(axis=1)
    if gaps.any():
        row = merged[gaps].iloc[0]
        raise WindowError(f"no {variable} history for unit {row['unit_id']}, year {row['year']}")
    clim = merged[f"{variable}_normal"].to_numpy()
    merged[f"{variable}_clim"] = clim
    merged[f"{variable}_clim^2"] = clim ** 2
    merged[f"{variable}_anom^2"] = (merged[variable].to_numpy() - clim) ** 2
    spec = ModelSpec(
        outcome=outcome,
        regressors=(f"{variable}_clim", f"{variable}_clim^2", f"{variable}_anom^2", *controls),
        fixed_effects=(region,), trends=trends, region=region, log_outcome=log_outcome,
        weather=(variable,),
    )
    return PanelTable(merged), spec


def long_difference(panel: PanelTable, period_a, period_b, columns, outcome="y") -> PanelTable:
    """Change in unit means between two year ranges.

    Parameters
    ----------
    period_a, period_b : (int, int)
        Inclusive year ranges; they must not overlap.
    columns : sequence of str
        Weather columns ``z``; the output has ``d_z`` (change in mean) and
        ``d_z^2`` (change in squared mean).

    Returns
    -------
    PanelTable
        One row per unit observed in both ranges, ``y`` the change in the
        mean outcome and ``year`` the first year of ``period_b``.  The
        number of dropped units is in ``frame.attrs["n_dropped"]``.
    """
    a0, a1 = (int(v) for v in period_a)
    b0, b1 = (int(v) for v in period_b)
    if a0 > a1 or b0 > b1:
        raise ValidationError("year ranges must be (start, end) with start <= end")
    if not (a1 < b0 or b1 < a0):
        raise ValidationError(f"periods {a0}-{a1} and {b0}-{b1} overlap")
    frame = panel.frame
    cols = [outcome, *columns]
    means = []
    for lo, hi in ((a0, a1), (b0, b1)):
        sub = frame[(frame["year"] >= lo) & (frame["year"] <= hi)]
        means.append(sub.groupby("unit_id")[cols].mean())
    ma, mb = means
    units = ma.index.intersection(mb.index)
    n_dropped = len(ma.index.union(mb.index)) - len(units)
    if n_dropped:
        log.info("long difference: %d units lack data in one of the periods", n_dropped)
    ma, mb = ma.loc[units], mb.loc[units]
    out = pd.DataFrame({"unit_id": units.astype(str), "year": b0, "y": (mb[outcome] - ma[outcome]).to_numpy()})
    for c in columns:
        out[f"d_{c}"] = (mb[c] - ma[c]).to_numpy()
        out[f"d_{c}^2"] = (mb[c] ** 2 - ma[c] ** 2).to_numpy()
    keep = [c for c in frame.columns if c not in cols and c not in ("unit_id", "year")]
    static = frame.groupby("unit_id")[keep].first().loc[units] if keep else None
    if static is not None:
        for c in keep:
            out[c] = static[c].to_numpy()
    table = PanelTable(out)
    table.frame.attrs["n_dropped"] = int(n_dropped)
    return table


def long_difference_spec(columns, intercept=False) -> ModelSpec:
    """Regression of ``y`` on ``d_z`` and ``d_z^2`` for each column, no fixed effects."""
    regs = []
    for c in columns:
        regs += [f"d_{c}", f"d_{c}^2"]
    return ModelSpec(regressors=tuple(regs), fixed_effects=(), intercept=intercept)


# ---------------------------------------------------------------------------
# warming impact


@dataclass(frozen=True)
class WarmingImpact:
    delta: float
    impact: float
    se: float
    n_obs: int


def _bin_width(basis: BasisMatrix) -> float:
    pts = basis.eval_points
    if "bin_width" in basis.meta:
        return float(basis.meta["bin_width"])
    if pts.size < 2:
        raise ValidationError("cannot infer the bin width from a one-bin basis")
    return float(pts[1] - pts[0])


def impact_gradient(spec: ModelSpec, frame: pd.DataFrame, delta: float, names, bin_width=None) -> np.ndarray:
    """Mean change of each regressor in ``names`` when temperature rises by ``delta``."""
    grad = pd.Series(0.0, index=list(names))
    touched = False
    if spec.basis is not None:
        width = _bin_width(spec.basis) if bin_width is None else float(bin_width)
        steps = delta / width
        if abs(steps - round(steps)) > 1e-9:
            raise ValidationError(f"warming of {delta} is not a multiple of the bin width {width}")
        Z = np.column_stack([np.asarray(frame[c], dtype=np.float64) for c in spec.basis_columns])
        dX = (shift_bins(Z, int(round(steps))) - Z) @ spec.basis.values
        grad[spec.basis_names] = dX.mean(axis=0)
        touched = True
    if spec.temperature is not None:
        T = np.asarray(frame[spec.temperature], dtype=np.float64)
        for name, source, power in spec.terms:
            if source == spec.temperature:
                grad[name] = np.mean((T + delta) ** power - T ** power)
                touched = True
    if not touched:
        raise ValidationError("the model has no temperature terms to shift")
    return grad.to_numpy()


def warming_impact(fit: FitResult, spec: ModelSpec, delta: float, panel=None, bin_width=None) -> WarmingImpact:
    """Average effect on the outcome of warming every observation by ``delta``.

    Polynomial models evaluate ``T + delta``; binned models move exposure
    ``delta / width`` bins up with clamping at the top bin.  The standard
    error follows from the delta method through the fit's covariance.

    ``panel`` defaults to the rows used in the fit.
    """
    frame = fit.frame if panel is None else (panel.frame if isinstance(panel, PanelTable) else panel)
    g = impact_gradient(spec, frame, float(delta), fit.names, bin_width)
    value = float(g @ fit.gamma)
    var = float(g @ fit.vcov @ g)
    return WarmingImpact(float(delta), value, float(np.sqrt(max(var, 0.0))), len(frame))
