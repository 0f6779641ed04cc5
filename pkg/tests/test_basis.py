import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agropanel.basis import (
    ExposureBasis, chebyshev_basis, identity_basis, make_basis, ncs_basis, numerical_rank, recover_curve, reduce,
    step_basis, tensor_basis,
)
from agropanel.exceptions import RankError, ShapeError, ValidationError
from agropanel.thermal import BinGrid

BINS = BinGrid(0, 38, 1)


def _residual(M, v):
    coef, *_ = np.linalg.lstsq(M, v, rcond=None)
    return np.linalg.norm(M @ coef - v)


def truncated_power_natural_spline(x, knots):
    """Natural cubic spline basis from truncated powers (dimension = number of knots)."""
    K = len(knots)

    def d(k):
        return (np.clip(x - knots[k], 0, None) ** 3 - np.clip(x - knots[-1], 0, None) ** 3) / (knots[-1] - knots[k])

    cols = [np.ones_like(x), x] + [d(k) - d(K - 2) for k in range(K - 2)]
    return np.column_stack(cols)


def test_step_examples():
    whole = step_basis(BinGrid(0, 39, 1), 40)
    assert whole.shape == (40, 1) and (whole.values == 1).all()
    assert np.array_equal(step_basis(BINS, 1).values, np.eye(39))
    assert step_basis(BinGrid(0, 39, 1), 5).J == 8
    with pytest.raises(ValidationError):
        step_basis(BINS, 0.5)
    assert step_basis(BINS, 5).meta["short_last_step"]


def test_step_spaces_nest():
    wide = step_basis(BinGrid(0, 39, 1), 10).values
    narrow = step_basis(BinGrid(0, 39, 1), 5).values
    for j in range(wide.shape[1]):
        assert _residual(narrow, wide[:, j]) < 1e-10


@pytest.mark.parametrize("df", [3, 7, 12])
def test_ncs_sizes(df):
    assert ncs_basis(BINS, df).shape == (39, df)


def test_ncs_is_linear_beyond_boundary_knots():
    x = np.arange(-5.0, 45.0)
    B = ncs_basis(x, 7, boundary_knots=(0.5, 38.5)).values
    for rows in (B[:3], B[-3:]):
        assert np.abs(rows[0] - 2 * rows[1] + rows[2]).max() < 1e-8


def test_ncs_matches_truncated_power_space():
    B = ncs_basis(BINS, 7)
    knots = np.array([B.meta["boundary_knots"][0], *B.meta["knots"], B.meta["boundary_knots"][1]])
    x = BINS.midpoints
    T = truncated_power_natural_spline(x, knots)
    for j in range(B.J):
        assert _residual(T, B.values[:, j]) / np.linalg.norm(B.values[:, j]) < 1e-8
    # together with a constant, the two bases span the same space
    assert numerical_rank(np.column_stack([B.values, np.ones(39)])) == T.shape[1]


def test_ncs_errors():
    with pytest.raises(RankError):
        ncs_basis(BinGrid(0, 3, 1), 5)
    with pytest.raises(ValidationError):
        ncs_basis(BINS, 1)


def test_chebyshev():
    assert np.array_equal(chebyshev_basis(BINS, 0).values, np.ones((39, 1)))
    C = chebyshev_basis(BINS, 8)
    assert C.shape == (39, 9)
    assert np.abs(C.values).max() <= 1 + 1e-12
    u = np.asarray(C.meta["mapped"])
    assert np.abs(C.values[:, 2] - (2 * u ** 2 - 1)).max() <= 1e-12
    with pytest.raises(RankError):
        chebyshev_basis(BinGrid(0, 3, 1), 4)


def test_tensor_examples():
    I = tensor_basis(identity_basis(np.arange(3.0)), identity_basis(np.arange(2.0)))
    assert np.array_equal(I.values, np.eye(6))
    big = tensor_basis(ncs_basis(BinGrid(0, 35, 1), 6), ncs_basis(np.arange(4.0, 11.0), 3))
    assert big.shape == (252, 18)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_tensor_flattening_matches_two_sided_transform(seed):
    r = np.random.default_rng(seed)
    B1 = ncs_basis(np.arange(4.0), 2)
    B2 = chebyshev_basis(np.arange(3.0), 1)
    T = tensor_basis(B1, B2)
    Z2 = r.normal(size=(4, 3))
    z = Z2.ravel()
    assert np.abs(z @ T.values - (B1.values.T @ Z2 @ B2.values).ravel()).max() <= 1e-12
    assert np.array_equal(z.reshape(4, 3), Z2)


def test_reduce_examples(rng):
    Z = rng.random((5, 39))
    assert np.array_equal(reduce(Z, identity_basis(BINS)), Z)
    ones = step_basis(BinGrid(0, 38, 1), 39)
    assert np.allclose(reduce(Z, ones)[:, 0], Z.sum(axis=1), rtol=1e-14, atol=0)
    B = ncs_basis(BINS, 5)
    naive = np.zeros((5, 5))
    for i in range(5):
        for j in range(5):
            for k in range(39):
                naive[i, j] += Z[i, k] * B.values[k, j]
    assert np.abs(reduce(Z, B) - naive).max() <= 1e-12
    with pytest.raises(ShapeError):
        reduce(rng.random((2, 10)), B)


def test_recover_curve(rng):
    g = rng.normal(size=39)
    V = np.diag(rng.random(39))
    c = recover_curve(g, V, identity_basis(BINS))
    assert np.array_equal(c.beta, g) and np.allclose(c.se, np.sqrt(np.diag(V)))
    B = ncs_basis(BINS, 7)
    zero = recover_curve(rng.normal(size=7), np.zeros((7, 7)), B)
    assert (zero.se == 0).all()
    A = rng.normal(size=(7, 7))
    V = A @ A.T
    gam = rng.normal(size=7)
    c = recover_curve(gam, V, B)
    dense = B.values @ V @ B.values.T
    assert np.allclose(c.beta, B.values @ gam, rtol=1e-13, atol=1e-13)
    assert np.allclose(c.cov, dense, rtol=1e-12, atol=1e-12)
    assert np.allclose(c.se, np.sqrt(np.diag(dense)), rtol=1e-12)
    with pytest.raises(ValidationError):
        recover_curve(gam, -np.eye(7), B)


def test_drop_constant_leaves_constant_free_span():
    for kind, kw in (("step", {"step_width": 5}), ("chebyshev", {"degree": 8}), ("identity", {})):
        B = make_basis(kind, BINS, **kw)
        assert B.spans_constant()
        D = B.drop_constant()
        assert D.J == B.J - 1 and not D.spans_constant()
    assert not ncs_basis(BINS, 7).spans_constant()


def test_transformer_api(rng):
    Z = rng.random((6, 39))
    est = ExposureBasis(kind="ncs", df=7)
    X = est.fit_transform(Z)
    assert X.shape == (6, 7)
    assert list(est.get_feature_names_out()) == [f"ncs_{j}" for j in range(7)]
    assert est.get_params()["df"] == 7
    with pytest.raises(ShapeError):
        ExposureBasis().fit(rng.random((2, 10)))


def test_basis_csv(tmp_path):
    B = ncs_basis(BINS, 3)
    B.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "k,j,value" and len(lines) == 1 + 39 * 3
