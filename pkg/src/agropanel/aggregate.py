"""Aggregation of gridded data to administrative units.

Aggregation is a sparse matrix product ``A = P @ G``: ``G`` holds one column
per period and one row per grid cell, and each row of the projection matrix
``P`` is a convex weight vector over the cells of one unit.
"""
from __future__ import annotations

import logging

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .core import AdminUnits, Grid, GridHeader, GridStack, _read_triplets, _write_triplets
from .exceptions import AlignmentError, ShapeError, ValidationError

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


class ProjectionMatrix:
    """Row-stochastic sparse map from grid cells to units.

    Stored in compressed-row form.  Rows with no positive weight are kept
    empty and listed in :attr:`no_coverage`; projecting them yields NaN.
    """

    def __init__(self, matrix, unit_ids):
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        self.unit_ids = tuple(str(u) for u in unit_ids)
        if csr.shape[0] != len(self.unit_ids):
            raise ShapeError(f"{csr.shape[0]} rows but {len(self.unit_ids)} unit ids")
        if (csr.data < 0).any():
            raise ValidationError("projection weights must be positive")
        sums = np.asarray(csr.sum(axis=1)).ravel()
        empty = np.diff(csr.indptr) == 0
        bad = ~empty & (np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ValidationError(f"row for unit {self.unit_ids[i]} sums to {sums[i]!r}, expected 1")
        self.csr = csr
        self.no_coverage = tuple(u for u, e in zip(self.unit_ids, empty) if e)

    @classmethod
    def from_triplets(cls, rows, cols, weights, unit_ids, n_cells, normalize=True):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)
        n_units = len(unit_ids)
        if cols.size and (cols.min() < 0 or cols.max() >= n_cells):
            raise ValidationError("cell index outside grid bounds")
        if (weights < 0).any():
            raise ValidationError("projection weights must be non-negative")
        pairs = pd.DataFrame({"r": rows, "c": cols})
        if pairs.duplicated().any():
            r, c = pairs[pairs.duplicated()].iloc[0]
            raise ValidationError(f"duplicate projection entry for unit {unit_ids[r]}, cell {c}")
        keep = weights > 0
        m = sp.csr_matrix((weights[keep], (rows[keep], cols[keep])), shape=(n_units, n_cells))
        if normalize:
            sums = np.asarray(m.sum(axis=1)).ravel()
            # rows already stochastic are left untouched so file round-trips are exact
            scale = np.divide(1.0, sums, out=np.zeros_like(sums), where=sums > 0)
            scale[np.abs(sums - 1.0) <= ROW_SUM_TOL] = 1.0
            m = sp.csr_matrix(sp.diags(scale) @ m)
        return cls(m, unit_ids)

    @property
    def n_units(self) -> int:
        return self.csr.shape[0]

    @property
    def n_cells(self) -> int:
        return self.csr.shape[1]

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def __eq__(self, other):
        if not isinstance(other, ProjectionMatrix):
            return NotImplemented
        return (
            self.unit_ids == other.unit_ids
            and self.csr.shape == other.csr.shape
            and np.array_equal(self.csr.indptr, other.csr.indptr)
            and np.array_equal(self.csr.indices, other.csr.indices)
            and np.array_equal(self.csr.data, other.csr.data)
        )

    __hash__ = None


def zonal_fractions(fine: Grid, coarse_header: GridHeader, class_code) -> Grid:
    """Fraction of each coarse cell covered by fine cells of ``class_code``.

    The fine resolution must divide the coarse one exactly and the fine
    grid must sit on coarse cell boundaries.  The denominator counts the
    fine cells with data that fall inside the coarse cell; coarse cells with
    none get nodata.
    """
    if isinstance(coarse_header, Grid):
        coarse_header = coarse_header.header
    ratio = coarse_header.cellsize / fine.cellsize
    if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
        raise AlignmentError(
            f"coarse cellsize {coarse_header.cellsize} is not an integer multiple of fine cellsize {fine.cellsize}"
        )
    ox = (fine.xll - coarse_header.xll) / fine.cellsize
    oy = (fine.yll - coarse_header.yll) / fine.cellsize
    if abs(ox - round(ox)) > 1e-6 or abs(oy - round(oy)) > 1e-6:
        raise AlignmentError("fine grid origin is not aligned with coarse cell boundaries")
    ratio, ox, oy = int(round(ratio)), int(round(ox)), int(round(oy))

    frow = np.arange(fine.nrows)
    fcol = np.arange(fine.ncols)
    # fine row counted from the south edge of the coarse grid, in fine cells
    south = oy + (fine.nrows - 1 - frow)
    crow = coarse_header.nrows - 1 - np.floor_divide(south, ratio)
    ccol = np.floor_divide(ox + fcol, ratio)
    CR, CC = np.meshgrid(crow, ccol, indexing="ij")
    CR, CC = CR.ravel(), CC.ravel()
    inside = (CR >= 0) & (CR < coarse_header.nrows) & (CC >= 0) & (CC < coarse_header.ncols)
    valid = inside & ~fine.mask
    target = (CR * coarse_header.ncols + CC)[valid]
    hits = fine.values[valid] == class_code
    total = np.bincount(target, minlength=coarse_header.size).astype(np.float64)
    count = np.bincount(target, weights=hits.astype(np.float64), minlength=coarse_header.size)
    frac = np.full(coarse_header.size, coarse_header.nodata)
    covered = total > 0
    frac[covered] = count[covered] / total[covered]
    return Grid.from_header(coarse_header, frac)


def build_projection(units: AdminUnits, weight_grid: Grid) -> ProjectionMatrix:
    """Combine unit membership with an activity weight grid and row-normalize.

    Entry ``(u, c)`` is ``membership(u, c) * weight_grid(c)``.  Nodata cells in
    the weight grid count as zero.  Units whose cells all carry zero weight
    end up with an empty row listed in ``no_coverage``.
    """
    w = np.where(weight_grid.mask, 0.0, weight_grid.values)
    if (w < 0).any():
        raise ValidationError("weight grid values must be >= 0")
    rows, cols, member = units.triplets()
    if cols.size and cols.max() >= weight_grid.header.size:
        raise ValidationError("unit references a cell outside the weight grid")
    P = ProjectionMatrix.from_triplets(rows, cols, member * w[cols], units.unit_ids, weight_grid.header.size)
    if P.no_coverage:
        log.warning("%d units have no weighted coverage: %s", len(P.no_coverage), ", ".join(P.no_coverage[:10]))
    return P


def project(P: ProjectionMatrix, G) -> np.ndarray:
    """Aggregate a stack to units: ``A[u, t] = sum_c P[u, c] * G[c, t]``.

    Parameters
    ----------
    P : ProjectionMatrix
    G : GridStack or ndarray of shape (T, n_cells)
        Layers are rows, as in :class:`GridStack`.

    Returns
    -------
    A : ndarray, shape (n_units, T)
        Nodata cells are skipped and the remaining weights of the row are
        renormalized for that layer.  Rows with no usable cell give NaN.
    """
    if isinstance(G, GridStack):
        layers, nodata = G.layers, G.header.nodata
    else:
        layers, nodata = np.asarray(G, dtype=np.float64), np.nan
        if layers.ndim == 1:
            layers = layers[None, :]
    if layers.shape[1] != P.n_cells:
        raise ShapeError(f"projection has {P.n_cells} cells but layers have length {layers.shape[1]}")
    csr = P.csr
    empty = np.diff(csr.indptr) == 0
    out = np.empty((P.n_units, layers.shape[0]))
    for t in range(layers.shape[0]):
        row = layers[t]
        bad = np.isnan(row) if np.isnan(nodata) else (row == nodata) | np.isnan(row)
        if bad.any():
            num = csr @ np.where(bad, 0.0, row)
            den = csr @ (~bad).astype(np.float64)
            with np.errstate(invalid="ignore", divide="ignore"):
                col = num / den
            col[den == 0] = np.nan
        else:
            col = csr @ row
        out[:, t] = col
    out[empty] = np.nan
    return out


def project_to_frame(P: ProjectionMatrix, stack: GridStack) -> pd.DataFrame:
    """Long ``unit_id,label,value`` table of :func:`project` output."""
    A = project(P, stack)
    return pd.DataFrame(
        {
            "unit_id": np.repeat(P.unit_ids, stack.n_layers),
            "label": np.tile(stack.labels, P.n_units),
            "value": A.ravel(),
        }
    )


def read_projection_csv(path, n_cells: int) -> ProjectionMatrix:
    """Read ``unit_id,cell_index,weight`` triplets; rows are normalized to sum to 1."""
    order, cells, weights = _read_triplets(path)
    rows = np.concatenate([np.full(len(c), i) for i, c in enumerate(cells)] or [np.empty(0, int)])
    return ProjectionMatrix.from_triplets(
        rows, np.concatenate(cells or [np.empty(0, int)]), np.concatenate(weights or [np.empty(0)]), order, n_cells
    )


def write_projection_csv(P: ProjectionMatrix, path) -> None:
    csr = P.csr
    cells = [csr.indices[csr.indptr[i] : csr.indptr[i + 1]] for i in range(P.n_units)]
    weights = [csr.data[csr.indptr[i] : csr.indptr[i + 1]] for i in range(P.n_units)]
    _write_triplets(path, P.unit_ids, cells, weights)
