import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agropanel.aggregate import (
    ProjectionMatrix, build_projection, project, project_to_frame, read_projection_csv, write_projection_csv,
    zonal_fractions,
)
from agropanel.core import AdminUnits, Grid, GridHeader, GridStack
from agropanel.exceptions import AlignmentError, ShapeError, ValidationError


def test_fully_and_half_covered_cells():
    fine = Grid(4, 2, 0, 0, 1, -9999, [82, 82, 82, 1,
                                       82, 82, 1, 82])
    out = zonal_fractions(fine, GridHeader(2, 1, 0, 0, 2), 82)
    assert out.values.tolist() == [1.0, 0.5]


def test_zonal_matches_brute_force_count(rng):
    codes = rng.integers(0, 4, 900).astype(float)
    fine = Grid(30, 30, 10, 20, 0.1, -9999, codes)
    coarse = GridHeader(3, 3, 10, 20, 1.0)
    out = zonal_fractions(fine, coarse, 2).as_2d()
    C = codes.reshape(30, 30)
    for r in range(3):
        for c in range(3):
            block = C[r * 10:(r + 1) * 10, c * 10:(c + 1) * 10]
            assert out[r, c] == (block == 2).sum() / 100


def test_zonal_alignment_errors():
    fine = Grid(3, 3, 0, 0, 0.3, -9999, np.zeros(9))
    with pytest.raises(AlignmentError):
        zonal_fractions(fine, GridHeader(1, 1, 0, 0, 1.0), 0)
    fine = Grid(4, 4, 0.25, 0, 0.5, -9999, np.zeros(16))
    with pytest.raises(AlignmentError):
        zonal_fractions(fine, GridHeader(2, 2, 0, 0, 1.0), 0)


def test_zonal_ignores_nodata_in_denominator():
    fine = Grid(2, 1, 0, 0, 1, -9999, [5, -9999])
    assert zonal_fractions(fine, GridHeader(1, 1, 0, 0, 2), 5).values.tolist() == [1.0]


def test_projection_examples():
    wg = Grid(3, 1, 0, 0, 1, -9999, [0.2, 0.6, 0.0])
    one = build_projection(AdminUnits(["a"], [[1]], [[1.0]]), wg)
    assert one.toarray().tolist() == [[0.0, 1.0, 0.0]]
    two = build_projection(AdminUnits(["a"], [[0, 1]], [[0.5, 0.5]]), wg)
    assert np.allclose(two.toarray(), [[0.25, 0.75, 0.0]], rtol=0, atol=1e-15)
    empty = build_projection(AdminUnits(["a", "b"], [[2], [0]], [[1.0], [1.0]]), wg)
    assert empty.no_coverage == ("a",)
    A = project(empty, np.array([[1.0, 2.0, 3.0]]))
    assert np.isnan(A[0, 0]) and A[1, 0] == 1.0


def test_negative_weight_grid_rejected():
    wg = Grid(2, 1, 0, 0, 1, -9999, [0.2, -0.1])
    with pytest.raises(ValidationError):
        build_projection(AdminUnits(["a"], [[0, 1]], [[0.5, 0.5]]), wg)


def test_project_identity_and_average():
    P = ProjectionMatrix.from_triplets([0, 1, 1], [2, 0, 1], [1.0, 0.5, 0.5], ["a", "b"], 3)
    G = np.array([[10.0, 20.0, 5.0], [1.0, 3.0, 7.0]])
    A = project(P, G)
    assert A[0].tolist() == [5.0, 7.0]
    assert A[1].tolist() == [15.0, 2.0]


def test_project_matches_dense_multiply(rng):
    dense = rng.random((5, 7)) * (rng.random((5, 7)) < 0.5)
    dense[dense.sum(axis=1) == 0, 0] = 1.0
    dense /= dense.sum(axis=1, keepdims=True)
    rows, cols = np.nonzero(dense)
    P = ProjectionMatrix.from_triplets(rows, cols, dense[rows, cols], list("abcde"), 7)
    G = rng.normal(size=(4, 7))
    assert np.abs(project(P, G) - dense @ G.T).max() <= 1e-12


def test_nodata_renormalizes_within_row():
    h = GridHeader(3, 1, 0, 0, 1)
    stack = GridStack(h, [[10.0, -9999.0, 30.0], [-9999.0, -9999.0, -9999.0]], ["t0", "t1"])
    P = ProjectionMatrix.from_triplets([0, 0, 0], [0, 1, 2], [0.25, 0.5, 0.25], ["a"], 3)
    A = project(P, stack)
    assert A[0, 0] == 20.0 and np.isnan(A[0, 1])


def test_project_shape_mismatch():
    P = ProjectionMatrix.from_triplets([0], [0], [1.0], ["a"], 3)
    with pytest.raises(ShapeError):
        project(P, np.zeros((2, 4)))


def test_duplicate_entries_rejected():
    with pytest.raises(ValidationError, match="duplicate"):
        ProjectionMatrix.from_triplets([0, 0], [1, 1], [0.5, 0.5], ["a"], 3)


def test_projection_csv_round_trip(tmp_path, rng):
    P = ProjectionMatrix.from_triplets([0, 0, 1, 2], [0, 3, 2, 1], rng.random(4), ["a", "b", "c"], 4)
    write_projection_csv(P, tmp_path / "p.csv")
    assert read_projection_csv(tmp_path / "p.csv", 4) == P


def test_project_to_frame_layout():
    h = GridHeader(2, 1, 0, 0, 1)
    stack = GridStack(h, [[1.0, 3.0], [2.0, 4.0]], ["d1", "d2"])
    P = ProjectionMatrix.from_triplets([0, 1], [0, 1], [1.0, 1.0], ["a", "b"], 2)
    f = project_to_frame(P, stack)
    assert f.values.tolist() == [["a", "d1", 1.0], ["a", "d2", 2.0], ["b", "d1", 3.0], ["b", "d2", 4.0]]


def _random_P(r, n_units, n_cells):
    rows, cols, w = [], [], []
    for u in range(n_units):
        cells = r.choice(n_cells, size=int(r.integers(1, n_cells + 1)), replace=False)
        rows += [u] * len(cells)
        cols += cells.tolist()
        w += r.uniform(0.01, 1, len(cells)).tolist()
    return ProjectionMatrix.from_triplets(rows, cols, w, [str(i) for i in range(n_units)], n_cells)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_projection_is_linear_and_convex(seed, a, b):
    r = np.random.default_rng(seed)
    P = _random_P(r, 4, 9)
    G1, G2 = r.normal(size=(3, 9)), r.normal(size=(3, 9))
    lhs = project(P, a * G1 + b * G2)
    rhs = a * project(P, G1) + b * project(P, G2)
    assert np.abs(lhs - rhs).max() <= 1e-10
    A = project(P, G1)
    dense = P.toarray()
    for u in range(4):
        vals = G1[:, dense[u] > 0]
        assert (A[u] >= vals.min(axis=1) - 1e-12).all() and (A[u] <= vals.max(axis=1) + 1e-12).all()
    sums = dense.sum(axis=1)
    assert np.abs(sums - 1).max() <= 1e-12
