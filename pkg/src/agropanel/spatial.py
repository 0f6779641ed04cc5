"""Spatial weights, Moran's I and the maximum-likelihood spatial error model."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from .core import PanelTable
from .exceptions import ConfigurationError, ConvergenceError, ShapeError, ValidationError
from .geo import pairwise_km
from .regress import ModelSpec, _codes_for, design, Absorber
from .rng import stream

log = logging.getLogger(__name__)

SEM_MAX_N = 5000
SCHEMES = ("knn", "inverse_distance_cutoff", "rook", "queen", "custom")


@dataclass(frozen=True, eq=False)
class SpatialWeights:
    """Sparse ``n x n`` neighbour weights with a zero diagonal.

    Build with :meth:`knn`, :meth:`inverse_distance` or :meth:`lattice`.
    ``ids`` gives the unit order of rows and columns.
    """

    matrix: sp.csr_matrix
    scheme: str
    row_normalized: bool
    ids: tuple

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=np.float64)
        m.eliminate_zeros()
        if m.shape[0] != m.shape[1]:
            raise ShapeError(f"weights must be square, got {m.shape}")
        if len(self.ids) != m.shape[0]:
            raise ShapeError(f"{m.shape[0]} rows but {len(self.ids)} ids")
        if (m.data < 0).any():
            raise ValidationError("spatial weights must be non-negative")
        if np.abs(m.diagonal()).max(initial=0.0) > 0:
            raise ValidationError("spatial weights must have a zero diagonal")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown weights scheme {self.scheme!r}")
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if self.row_normalized:
            sums = np.asarray(m.sum(axis=1)).ravel()
            bad = (sums > 0) & (np.abs(sums - 1) > 1e-12)
            if bad.any():
                raise ValidationError("row-normalized weights must have rows summing to 1")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def s0(self) -> float:
        return float(self.matrix.sum())

    def normalized(self) -> "SpatialWeights":
        if self.row_normalized:
            return self
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        if (sums == 0).any():
            log.warning("%d units have no neighbours", int((sums == 0).sum()))
        scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
        return SpatialWeights(sp.diags(scale) @ self.matrix, self.scheme, True, self.ids)

    @classmethod
    def knn(cls, lat, lon, k=5, ids=None, normalize=True) -> "SpatialWeights":
        """Binary k-nearest-neighbour weights made symmetric by union."""
        lat, lon = np.asarray(lat, float), np.asarray(lon, float)
        n = lat.size
        if not 1 <= k < n:
            raise ConfigurationError(f"k must be between 1 and n-1 = {n - 1}, got {k}")
        D = pairwise_km(lat, lon)
        np.fill_diagonal(D, np.inf)
        nbr = np.argsort(D, axis=1, kind="stable")[:, :k]
        rows = np.repeat(np.arange(n), k)
        A = sp.csr_matrix((np.ones(n * k), (rows, nbr.ravel())), shape=(n, n))
        A = ((A + A.T) > 0).astype(np.float64)
        W = cls(A, "knn", False, tuple(range(n)) if ids is None else ids)
        return W.normalized() if normalize else W

    @classmethod
    def inverse_distance(cls, lat, lon, cutoff_km, power=1.0, ids=None, normalize=True) -> "SpatialWeights":
        """Weights ``1 / d**power`` for pairs closer than ``cutoff_km``."""
        if not cutoff_km > 0:
            raise ConfigurationError("cutoff_km must be > 0")
        D = pairwise_km(np.asarray(lat, float), np.asarray(lon, float))
        np.fill_diagonal(D, np.inf)
        near = (D <= cutoff_km) & (D > 0)
        A = np.where(near, np.where(near, D, 1.0) ** -power, 0.0)
        W = cls(sp.csr_matrix(A), "inverse_distance_cutoff", False, tuple(range(len(D))) if ids is None else ids)
        return W.normalized() if normalize else W

    @classmethod
    def lattice(cls, nrows, ncols, contiguity="rook", ids=None, normalize=True) -> "SpatialWeights":
        """Contiguity on a regular ``nrows x ncols`` lattice, row-major cell order."""
        if contiguity not in ("rook", "queen"):
            raise ConfigurationError(f"contiguity must be rook or queen, got {contiguity!r}")
        moves = [(-1, 0), (1, 0), (0, -1), (0, 1)]
        if contiguity == "queen":
            moves += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
        r, c = np.divmod(np.arange(nrows * ncols), ncols)
        rows, cols = [], []
        for dr, dc in moves:
            rr, cc = r + dr, c + dc
            ok = (rr >= 0) & (rr < nrows) & (cc >= 0) & (cc < ncols)
            rows.append(np.flatnonzero(ok))
            cols.append((rr * ncols + cc)[ok])
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        n = nrows * ncols
        A = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
        W = cls(A, contiguity, False, tuple(range(n)) if ids is None else ids)
        return W.normalized() if normalize else W

    @classmethod
    def parse(cls, text: str, centroids: pd.DataFrame) -> "SpatialWeights":
        """``knn:K`` or ``dist:KM`` over ``centroids`` (``unit_id, lat, lon``)."""
        head, _, arg = text.partition(":")
        cent = centroids.sort_values("unit_id", kind="mergesort")
        ids = cent["unit_id"].astype(str).tolist()
        try:
            if head == "knn":
                return cls.knn(cent["lat"], cent["lon"], int(arg or 5), ids)
            if head in ("dist", "inverse_distance"):
                return cls.inverse_distance(cent["lat"], cent["lon"], float(arg), ids=ids)
        except ValueError as exc:
            raise ConfigurationError(f"bad weights option {text!r}") from exc
        raise ConfigurationError(f"unknown weights option {text!r}; use knn:K or dist:KM")


@dataclass(frozen=True)
class MoranResult:
    I: float
    p: float
    expected: float
    n_perm: int


def _moran_stat(E, W: sp.csr_matrix, s0):
    """Moran's I for each column of ``E`` (already centered)."""
    n = E.shape[0]
    num = np.einsum("ij,ij->j", E, W @ E)
    den = np.einsum("ij,ij->j", E, E)
    return (n / s0) * num / den


def morans_i(residuals, W: SpatialWeights, n_perm: int = 999, seed: int = 0) -> MoranResult:
    """Moran's I of a cross-section with a two-sided permutation p-value.

    ``residuals`` are centered first.  The p-value is
    ``(1 + #{|I*| >= |I|}) / (n_perm + 1)`` over random relabellings.
    """
    e = np.asarray(residuals, dtype=np.float64).ravel()
    if e.size != W.n:
        raise ShapeError(f"{e.size} residuals for {W.n} units")
    e = e - e.mean()
    if not np.any(np.abs(e) > 1e-14 * max(1.0, np.abs(residuals).max())):
        raise ValidationError("Moran's I is undefined for constant residuals (zero variance)")
    s0 = W.s0
    if s0 == 0:
        raise ValidationError("spatial weights are all zero")
    I = float(_moran_stat(e[:, None], W.matrix, s0)[0])
    p = np.nan
    if n_perm:
        rng = stream(seed, 0)
        E = np.column_stack([rng.permutation(e) for _ in range(n_perm)])
        null = _moran_stat(E, W.matrix, s0)
        p = (1 + np.count_nonzero(np.abs(null) >= abs(I) - 1e-15)) / (n_perm + 1)
    return MoranResult(I, float(p), -1.0 / (e.size - 1), int(n_perm))


def panel_morans_i(residuals, unit_ids, years, W: SpatialWeights, n_perm=999, seed=0) -> MoranResult:
    """Average of per-year Moran's I; permutations relabel units jointly across years."""
    frame = pd.DataFrame({"u": np.asarray(unit_ids).astype(str), "t": years, "e": residuals})
    wide = frame.pivot(index="u", columns="t", values="e").reindex(list(W.ids))
    if wide.isna().any().any():
        raise ValidationError("residuals must cover every unit of the weights matrix in every year")
    E = wide.to_numpy()
    E = E - E.mean(axis=0)
    s0 = W.s0

    def stat(M):
        return float(np.mean(_moran_stat(M, W.matrix, s0)))

    I = stat(E)
    rng = stream(seed, 0)
    null = np.array([stat(E[rng.permutation(W.n)]) for _ in range(n_perm)])
    p = (1 + np.count_nonzero(np.abs(null) >= abs(I) - 1e-15)) / (n_perm + 1) if n_perm else np.nan
    return MoranResult(I, float(p), -1.0 / (W.n - 1), int(n_perm))


# ---------------------------------------------------------------------------
# spatial error model


def logdet_eigen(omega, lam) -> float:
    """``log|I - lam W|`` from the eigenvalues ``omega`` of ``W``."""
    return float(np.sum(np.log(1.0 - lam * np.asarray(omega))).real)


@dataclass(frozen=True, eq=False)
class SEMResult:
    names: tuple
    beta: np.ndarray
    lam: float
    sigma2: float
    vcov: np.ndarray
    loglik: float
    bounds: tuple

    @property
    def se(self):
        return np.sqrt(np.diag(self.vcov))

    def to_dict(self):
        return {
            "names": list(self.names), "beta": self.beta.tolist(), "se": self.se.tolist(),
            "lambda": self.lam, "sigma2": self.sigma2, "vcov": self.vcov.tolist(),
            "loglik": self.loglik, "lambda_bounds": list(self.bounds),
        }


class SpatialErrorModel:
    """Concentrated likelihood of a within-demeaned panel with ``u = lam W u + e``.

    Rows are arranged as ``T`` blocks of ``n`` units in ``W.ids`` order.
    """

    def __init__(self, y, X, W: SpatialWeights, n_periods: int, names):
        self.y = np.asarray(y, float)
        self.X = np.asarray(X, float)
        self.W = W
        self.T = int(n_periods)
        self.n = W.n
        self.names = tuple(names)
        if W.n > SEM_MAX_N:
            raise ConfigurationError(f"dense eigen-decomposition is limited to {SEM_MAX_N} units, got {W.n}")
        self.omega = np.linalg.eigvals(W.matrix.toarray())
        real = self.omega.real
        lo = 1.0 / real.min() if real.min() < 0 else -np.inf
        hi = 1.0 / real.max()
        self.bounds = (float(lo), float(hi))
        self._Yb = self.y.reshape(self.T, self.n).T  # n x T
        self._Xb = self.X.reshape(self.T, self.n, -1)

    def _filter(self, lam):
        Wm = self.W.matrix
        ys = (self._Yb - lam * (Wm @ self._Yb)).T.ravel()
        Xs = np.concatenate([Xt - lam * (Wm @ Xt) for Xt in self._Xb])
        return ys, Xs

    def gls(self, lam):
        ys, Xs = self._filter(lam)
        beta, *_ = np.linalg.lstsq(Xs, ys, rcond=None)
        e = ys - Xs @ beta
        return beta, e, Xs

    def loglik(self, lam) -> float:
        _, e, _ = self.gls(lam)
        N = self.n * self.T
        s2 = e @ e / N
        return -0.5 * N * (np.log(2 * np.pi * s2) + 1.0) + self.T * logdet_eigen(self.omega, lam)

    def fit(self, lam=None, xatol=1e-8) -> SEMResult:
        if lam is None:
            lo, hi = self.bounds
            lo = max(lo, -0.999999)
            span = (lo + 1e-7, hi - 1e-7)
            res = minimize_scalar(lambda v: -self.loglik(v), bounds=span, method="bounded",
                                  options={"xatol": xatol, "maxiter": 500})
            lam = float(res.x)
            if not res.success or min(lam - span[0], span[1] - lam) < 1e-5:
                raise ConvergenceError(f"spatial error parameter hit the admissible boundary (lambda = {lam:.6f})")
        beta, e, Xs = self.gls(lam)
        N = self.n * self.T
        s2 = float(e @ e / N)
        V = s2 * np.linalg.inv(Xs.T @ Xs)
        return SEMResult(self.names, beta, float(lam), s2, (V + V.T) / 2, self.loglik(lam), self.bounds)


def sem_ml(panel: PanelTable, spec: ModelSpec, W: SpatialWeights, lam=None) -> SEMResult:
    """Maximum-likelihood spatial error model on a balanced panel.

    The outcome and regressors are demeaned over ``spec.fixed_effects``
    and then filtered by ``I - lam W`` period by period.  ``lam`` fixes the
    spatial parameter instead of estimating it.
    """
    if not panel.is_balanced():
        missing = panel.missing_pairs()
        show = ", ".join(f"({u}, {t})" for u, t in missing[:5])
        raise ValidationError(f"spatial error model needs a balanced panel; missing {len(missing)} pairs: {show}")
    if spec.weights:
        raise ConfigurationError("regression weights are not supported by the spatial error model")
    units = set(panel.units)
    if units != set(W.ids):
        raise ValidationError("panel units and spatial weight ids differ")
    frame = panel.frame.copy()
    frame["_pos"] = frame["unit_id"].map({u: i for i, u in enumerate(W.ids)})
    frame = frame.sort_values(["year", "_pos"], kind="mergesort").reset_index(drop=True)
    y, X, frame = design(frame, spec)
    if len(frame) != len(panel):
        raise ValidationError("spatial error model needs complete rows for every unit-year")
    codes = _codes_for(frame, spec)
    M = Absorber(codes).transform(np.column_stack([y, X.to_numpy()])) if codes else np.column_stack([y, X.to_numpy()])
    model = SpatialErrorModel(M[:, 0], M[:, 1:], W, frame["year"].nunique(), X.columns)
    return model.fit(lam)
