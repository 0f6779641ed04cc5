"""Basis matrices that reduce K exposure bins to J regressors.

A basis ``B`` (K x J) turns bin exposures ``Z`` into regressors ``X = Z @ B``;
after estimation the per-bin marginal effects are ``beta = B @ gamma`` with
covariance ``B V B'``.  Bases are evaluated at bin midpoints.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.interpolate import BSpline
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import RankError, ShapeError, ValidationError
from .thermal import BinGrid

RANK_TOL = 1e-8
KINDS = ("step", "ncs", "chebyshev", "tensor", "identity")


def numerical_rank(M, tol=RANK_TOL) -> int:
    """Rank from a column-pivoted QR, counting |R_ii| > tol * |R_00|."""
    M = np.asarray(M, dtype=np.float64)
    if M.size == 0:
        return 0
    R = scipy.linalg.qr(M, mode="r", pivoting=True)[0]
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return 0
    return int((d > tol * d[0]).sum())


def _in_span(M, v, tol=RANK_TOL) -> bool:
    coef, *_ = np.linalg.lstsq(M, v, rcond=None)
    return np.linalg.norm(M @ coef - v) <= tol * max(1.0, np.linalg.norm(v))


@dataclass(frozen=True, eq=False)
class BasisMatrix:
    """K x J basis evaluated at bin midpoints.

    ``meta`` records construction details: knots for natural splines, the
    component shapes and index convention for tensor products, dropped
    columns, and so on.
    """

    kind: str
    values: np.ndarray = field(repr=False)
    eval_points: np.ndarray = field(repr=False)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown basis kind {self.kind!r}")
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeError("basis values must be a K x J matrix")
        K, J = values.shape
        if J > K:
            raise RankError(f"basis has more columns ({J}) than bins ({K})")
        if numerical_rank(values) < J:
            raise RankError(f"{self.kind} basis columns are linearly dependent (rank < {J})")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "eval_points", np.asarray(self.eval_points, dtype=np.float64))

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def spans_constant(self) -> bool:
        return _in_span(self.values, np.ones(self.K))

    def drop_constant(self) -> "BasisMatrix":
        """Remove one column so the span no longer contains constants.

        Needed whenever every observation has the same season length: the
        constant direction is then collinear with the unit fixed effects.
        The first column whose removal achieves this is dropped (``T_0``
        for Chebyshev, the lowest step for step functions), which pins the
        response to zero on that part of the temperature range.
        """
        if not self.spans_constant():
            return self
        ones = np.ones(self.K)
        for j in range(self.J):
            rest = np.delete(self.values, j, axis=1)
            if rest.shape[1] == 0:
                break
            if not _in_span(rest, ones):
                meta = dict(self.meta, dropped_column=j)
                return BasisMatrix(self.kind, rest, self.eval_points, meta)
        raise RankError(f"{self.kind} basis cannot be reduced to exclude the constant")

    def to_csv(self, path) -> None:
        """Write ``k,j,value`` rows for audit."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "j", "value"])
            for k in range(self.K):
                for j in range(self.J):
                    writer.writerow([k, j, repr(float(self.values[k, j]))])


@dataclass(frozen=True, eq=False)
class ResponseCurve:
    """Per-bin marginal effects with standard errors and full covariance."""

    beta: np.ndarray
    se: np.ndarray
    cov: np.ndarray

    def ci(self, z=1.959963984540054):
        return self.beta - z * self.se, self.beta + z * self.se


def _points(bins_or_points):
    if isinstance(bins_or_points, BinGrid):
        return bins_or_points.midpoints
    pts = np.asarray(bins_or_points, dtype=np.float64).ravel()
    if pts.size == 0:
        raise ShapeError("no evaluation points")
    return pts


def identity_basis(bins_or_points) -> BasisMatrix:
    pts = _points(bins_or_points)
    return BasisMatrix("identity", np.eye(pts.size), pts)


def step_basis(bins: BinGrid, step_width: float) -> BasisMatrix:
    """Indicator basis grouping consecutive bins into steps of ``step_width``.

    The last step may cover fewer bins; ``meta['short_last_step']`` says so.
    """
    ratio = step_width / bins.width
    if ratio < 1 - 1e-12:
        raise ValidationError(f"step width {step_width} is narrower than the bin width {bins.width}")
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValidationError(f"step width {step_width} is not a multiple of the bin width {bins.width}")
    ratio = int(round(ratio))
    K = bins.K
    J = -(-K // ratio)
    B = np.zeros((K, J))
    B[np.arange(K), np.arange(K) // ratio] = 1.0
    meta = {"step_width": float(step_width), "bins_per_step": ratio, "short_last_step": K % ratio != 0}
    return BasisMatrix("step", B, bins.midpoints, meta)


def _bspline_all(t, k, x, deriv=0):
    n = len(t) - k - 1
    spl = BSpline(t, np.eye(n), k, extrapolate=True)
    if deriv:
        spl = spl.derivative(deriv)
    return spl(np.atleast_1d(x))


def ncs_basis(bins_or_points, df: int, knots=None, boundary_knots=None) -> BasisMatrix:
    """Natural cubic spline basis with ``df`` columns.

    The basis spans natural cubic splines (linear beyond the boundary knots)
    that vanish at the lower boundary knot, so constants are excluded.
    Without ``knots``, ``df - 1`` interior knots are spaced evenly between the
    boundary knots, which default to the first and last evaluation point.

    Parameters
    ----------
    bins_or_points : BinGrid or array_like
        Evaluation points (bin midpoints for a :class:`BinGrid`).
    df : int
        Number of columns, at least 2.
    knots : array_like, optional
        Interior knots; overrides the even spacing.
    boundary_knots : (float, float), optional
    """
    x = _points(bins_or_points)
    if int(df) != df or df < 2:
        raise ValidationError(f"natural spline needs df >= 2, got {df!r}")
    df = int(df)
    if df > x.size:
        raise RankError(f"df={df} exceeds the number of bins ({x.size})")
    a, b = (float(x.min()), float(x.max())) if boundary_knots is None else map(float, boundary_knots)
    if not a < b:
        raise ValidationError("boundary knots must satisfy lower < upper")
    if knots is None:
        interior = np.linspace(a, b, df + 1)[1:-1]
    else:
        interior = np.sort(np.asarray(knots, dtype=np.float64))
        if interior.size != df - 1:
            raise ValidationError(f"df={df} requires {df - 1} interior knots, got {interior.size}")
        if interior.size and (interior[0] <= a or interior[-1] >= b):
            raise ValidationError("interior knots must lie strictly between the boundary knots")
    t = np.concatenate([[a] * 4, interior, [b] * 4])

    # natural-spline constraints plus f(a) = 0
    C = np.vstack([
        _bspline_all(t, 3, a, deriv=2),
        _bspline_all(t, 3, b, deriv=2),
        _bspline_all(t, 3, a),
    ])
    Q, _ = np.linalg.qr(C.T, mode="complete")
    N = Q[:, 3:]

    inside = (x >= a) & (x <= b)
    basis = np.empty((x.size, N.shape[1]))
    if inside.any():
        basis[inside] = _bspline_all(t, 3, x[inside]) @ N
    for edge, sel in ((a, x < a), (b, x > b)):
        if sel.any():
            value = _bspline_all(t, 3, edge) @ N
            slope = _bspline_all(t, 3, edge, deriv=1) @ N
            basis[sel] = value + (x[sel] - edge)[:, None] * slope
    meta = {"df": df, "knots": interior.tolist(), "boundary_knots": [a, b]}
    return BasisMatrix("ncs", basis, x, meta)


def chebyshev_basis(bins_or_points, degree: int, domain=None) -> BasisMatrix:
    """Chebyshev polynomials ``T_0 .. T_degree`` at affinely mapped points.

    ``domain`` defaults to the first and last evaluation point, which map
    to -1 and 1.
    """
    x = _points(bins_or_points)
    if int(degree) != degree or degree < 0:
        raise ValidationError(f"degree must be a non-negative integer, got {degree!r}")
    degree = int(degree)
    if degree + 1 > x.size:
        raise RankError(f"degree {degree} needs {degree + 1} columns but only {x.size} bins")
    lo, hi = (float(x.min()), float(x.max())) if domain is None else map(float, domain)
    if hi == lo:
        u = np.zeros_like(x)
    else:
        u = 2.0 * (x - lo) / (hi - lo) - 1.0
    T = np.empty((x.size, degree + 1))
    T[:, 0] = 1.0
    if degree >= 1:
        T[:, 1] = u
    for n in range(1, degree):
        T[:, n + 1] = 2.0 * u * T[:, n] - T[:, n - 1]
    return BasisMatrix("chebyshev", T, x, {"degree": degree, "domain": [lo, hi], "mapped": u.tolist()})


def tensor_basis(B1: BasisMatrix, B2: BasisMatrix) -> BasisMatrix:
    """Kronecker product ``B1 (x) B2``.

    Row ``k1 * K2 + k2`` is the 2-D bin ``(k1, k2)`` and column ``j1 * J2 + j2``
    the product of column ``j1`` of ``B1`` and column ``j2`` of ``B2``.  With
    ``Z2 = z.reshape(K1, K2)`` this gives
    ``z @ B == (B1.values.T @ Z2 @ B2.values).ravel()``.
    """
    values = np.kron(B1.values, B2.values)
    pts = np.column_stack([np.repeat(B1.eval_points, B2.K), np.tile(B2.eval_points, B1.K)])
    meta = {
        "components": [B1.kind, B2.kind],
        "shapes": [list(B1.shape), list(B2.shape)],
        "order": "row = k1*K2 + k2; col = j1*J2 + j2",
    }
    return BasisMatrix("tensor", values, pts, meta)


def reduce(Z, B: BasisMatrix) -> np.ndarray:
    """Project bin exposures onto the basis: ``X = Z @ B``."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.shape[-1] != B.K:
        raise ShapeError(f"Z has {Z.shape[-1]} columns, basis has {B.K} rows")
    return Z @ B.values


def recover_curve(gamma, vgamma, B: BasisMatrix) -> ResponseCurve:
    """Map coefficients back to per-bin effects: ``beta = B gamma``, ``cov = B V B'``."""
    gamma = np.asarray(gamma, dtype=np.float64).ravel()
    V = np.asarray(vgamma, dtype=np.float64)
    if gamma.size != B.J or V.shape != (B.J, B.J):
        raise ShapeError(f"expected {B.J} coefficients and a {B.J}x{B.J} covariance, got {gamma.size} and {V.shape}")
    asym = np.abs(V - V.T).max() if V.size else 0.0
    if asym > 1e-10 * max(1.0, np.abs(V).max()):
        raise ValidationError(f"coefficient covariance is not symmetric (max asymmetry {asym:.3g})")
    V = (V + V.T) / 2.0
    beta = B.values @ gamma
    cov = B.values @ V @ B.values.T
    d = np.diag(cov).copy()
    if (d < -1e-12).any():
        raise ValidationError(f"covariance has negative variances (min {d.min():.3g}); it is not PSD")
    d[d < 0] = 0.0
    return ResponseCurve(beta, np.sqrt(d), cov)


def make_basis(kind: str, bins: BinGrid, df=None, step_width=None, degree=None) -> BasisMatrix:
    if kind == "ncs":
        return ncs_basis(bins, df)
    if kind == "step":
        return step_basis(bins, step_width if step_width is not None else bins.width)
    if kind == "chebyshev":
        return chebyshev_basis(bins, degree)
    if kind in ("identity", "bins"):
        return identity_basis(bins)
    raise ValidationError(f"unknown basis kind {kind!r}")


class ExposureBasis(TransformerMixin, BaseEstimator):
    """Transformer from exposure bins to basis regressors.

    Parameters
    ----------
    kind : {'ncs', 'step', 'chebyshev', 'identity'}, default='ncs'
    lo, hi, width : float
        Bin grid (lower edges of first and last bin, bin width).
    df : int, default=7
        Natural spline columns.
    step_width : float, optional
        Step width for ``kind='step'``; defaults to the bin width.
    degree : int, default=8
        Chebyshev degree.
    drop_constant : bool, default=True
        Remove the constant direction (see :meth:`BasisMatrix.drop_constant`).
    """

    def __init__(self, kind="ncs", lo=0.0, hi=38.0, width=1.0, df=7, step_width=None, degree=8, drop_constant=True):
        self.kind = kind
        self.lo = lo
        self.hi = hi
        self.width = width
        self.df = df
        self.step_width = step_width
        self.degree = degree
        self.drop_constant = drop_constant

    @property
    def bins(self) -> BinGrid:
        return BinGrid(self.lo, self.hi, self.width)

    def fit(self, Z=None, y=None):
        B = make_basis(self.kind, self.bins, df=self.df, step_width=self.step_width, degree=self.degree)
        if self.drop_constant:
            B = B.drop_constant()
        if Z is not None:
            Z = check_array(Z, dtype=np.float64)
            if Z.shape[1] != B.K:
                raise ShapeError(f"Z has {Z.shape[1]} columns, bin grid has {B.K} bins")
        self.basis_ = B
        self.n_features_in_ = B.K
        return self

    def transform(self, Z):
        check_is_fitted(self, "basis_")
        Z = check_array(Z, dtype=np.float64)
        return reduce(Z, self.basis_)

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "basis_")
        return np.array([f"{self.kind}_{j}" for j in range(self.basis_.J)], dtype=object)

    def recover(self, gamma, vgamma) -> ResponseCurve:
        check_is_fitted(self, "basis_")
        return recover_curve(gamma, vgamma, self.basis_)
