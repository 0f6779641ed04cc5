"""Domain types shared across the pipeline and their on-disk formats.

Rasters are plain lat-lon ESRI ASCII grids stored row-major with the first
row northernmost.  Multi-layer stacks are a manifest CSV pointing at one
``.asc`` file per layer.  Tabular data (stations, panels, admin weights) are
CSV files with fixed headers.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .exceptions import GridFormatError, ShapeError, ValidationError

__all__ = [
    "GridHeader",
    "Grid",
    "GridStack",
    "StationTable",
    "AdminUnits",
    "PanelTable",
    "read_ascii_grid",
    "write_ascii_grid",
    "read_grid_stack",
    "write_grid_stack",
    "read_stations_csv",
    "write_stations_csv",
    "read_panel_csv",
    "write_panel_csv",
    "read_admin_csv",
    "write_admin_csv",
]

FLOAT_FMT = "%.17g"
_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")
STATION_COLUMNS = ["station_id", "lat", "lon", "date", "variable", "value"]
STATION_VARIABLES = ("tmax", "tmin", "ppt")
ADMIN_COLUMNS = ["unit_id", "cell_index", "weight"]
MANIFEST_COLUMNS = ["layer_index", "label", "path"]


def _readonly(values, dtype=np.float64):
    arr = np.asarray(values, dtype=dtype)
    view = arr.view()
    view.flags.writeable = False
    return view


def _nodata_mask(values, nodata):
    if math.isnan(nodata):
        return np.isnan(values)
    return values == nodata


# ---------------------------------------------------------------------------
# rasters


@dataclass(frozen=True)
class GridHeader:
    """Georeferencing of a raster: extent, resolution and nodata sentinel."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata: float = -9999.0

    def __post_init__(self):
        if int(self.ncols) != self.ncols or self.ncols <= 0:
            raise ValidationError(f"ncols must be a positive integer, got {self.ncols!r}")
        if int(self.nrows) != self.nrows or self.nrows <= 0:
            raise ValidationError(f"nrows must be a positive integer, got {self.nrows!r}")
        if not self.cellsize > 0:
            raise ValidationError(f"cellsize must be > 0, got {self.cellsize!r}")
        object.__setattr__(self, "ncols", int(self.ncols))
        object.__setattr__(self, "nrows", int(self.nrows))
        for name in ("xll", "yll", "cellsize", "nodata"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def size(self) -> int:
        return self.ncols * self.nrows

    @property
    def shape(self) -> tuple[int, int]:
        return self.nrows, self.ncols

    def same_geometry(self, other: "GridHeader") -> bool:
        """True when both headers describe the same cells (nodata may differ)."""
        return (
            self.ncols == other.ncols
            and self.nrows == other.nrows
            and self.xll == other.xll
            and self.yll == other.yll
            and self.cellsize == other.cellsize
        )

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        """Return ``(x, y)`` (longitude, latitude) of the center of cell ``(row, col)``."""
        if not (0 <= row < self.nrows and 0 <= col < self.ncols):
            raise IndexError(f"cell ({row}, {col}) outside a {self.nrows}x{self.ncols} grid")
        x = self.xll + (col + 0.5) * self.cellsize
        y = self.yll + (self.nrows - row - 0.5) * self.cellsize
        return x, y

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Longitudes and latitudes of every cell center, row-major."""
        cols = np.arange(self.ncols)
        rows = np.arange(self.nrows)
        x = self.xll + (cols + 0.5) * self.cellsize
        y = self.yll + (self.nrows - rows - 0.5) * self.cellsize
        xx, yy = np.meshgrid(x, y)
        return xx.ravel(), yy.ravel()

    def cell_index(self, x: float, y: float) -> int:
        """Row-major index of the cell containing point ``(x, y)``."""
        col = int(math.floor((x - self.xll) / self.cellsize))
        row = self.nrows - 1 - int(math.floor((y - self.yll) / self.cellsize))
        if not (0 <= row < self.nrows and 0 <= col < self.ncols):
            raise IndexError(f"point ({x}, {y}) falls outside the grid extent")
        return row * self.ncols + col


@dataclass(frozen=True, eq=False)
class Grid:
    """Single raster layer.

    Parameters
    ----------
    ncols, nrows : int
        Grid dimensions.
    xll, yll : float
        Longitude and latitude of the lower-left corner, in degrees.
    cellsize : float
        Cell size in degrees.
    nodata : float
        Sentinel marking missing cells.
    values : array_like, shape (nrows * ncols,)
        Cell values, row-major, first row northernmost.
    """

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    nodata: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        header = GridHeader(self.ncols, self.nrows, self.xll, self.yll, self.cellsize, self.nodata)
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if values.size == 0:
            raise ShapeError("grid has no values")
        if values.size != header.size:
            raise ShapeError(
                f"grid value count mismatch: expected {header.size} "
                f"({header.nrows} rows x {header.ncols} cols), got {values.size}"
            )
        mask = _nodata_mask(values, header.nodata)
        if not np.isfinite(values[~mask]).all():
            raise ValidationError("grid contains non-finite values that are not the nodata sentinel")
        for name in ("ncols", "nrows", "xll", "yll", "cellsize", "nodata"):
            object.__setattr__(self, name, getattr(header, name))
        object.__setattr__(self, "values", _readonly(values))

    @classmethod
    def from_header(cls, header: GridHeader, values) -> "Grid":
        return cls(header.ncols, header.nrows, header.xll, header.yll, header.cellsize, header.nodata, values)

    @property
    def header(self) -> GridHeader:
        return GridHeader(self.ncols, self.nrows, self.xll, self.yll, self.cellsize, self.nodata)

    @property
    def mask(self) -> np.ndarray:
        """Boolean array, True where the cell is nodata."""
        return _nodata_mask(self.values, self.nodata)

    def masked(self) -> np.ndarray:
        """Values with nodata replaced by NaN."""
        out = np.array(self.values)
        out[self.mask] = np.nan
        return out

    def as_2d(self) -> np.ndarray:
        return self.values.reshape(self.nrows, self.ncols)

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return self.header.cell_center(row, col)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.header == other.header and np.array_equal(self.values, other.values, equal_nan=True)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GridStack:
    """Several layers sharing one header, e.g. the days of a month.

    ``layers`` has shape ``(T, ncols * nrows)``; ``labels`` are the period
    identifiers (ISO dates or ``YYYY-MM``) in strictly increasing order.
    """

    header: GridHeader
    layers: np.ndarray = field(repr=False)
    labels: tuple

    def __post_init__(self):
        layers = np.asarray(self.layers, dtype=np.float64)
        if layers.ndim == 1:
            layers = layers[None, :]
        if layers.ndim != 2 or layers.shape[0] < 1:
            raise ShapeError("a grid stack needs at least one layer")
        if layers.shape[1] != self.header.size:
            raise ShapeError(
                f"layer length {layers.shape[1]} does not match header size {self.header.size}"
            )
        labels = tuple(str(lab) for lab in self.labels)
        if len(labels) != layers.shape[0]:
            raise ShapeError(f"{layers.shape[0]} layers but {len(labels)} labels")
        for a, b in zip(labels, labels[1:]):
            if not a < b:
                raise ValidationError(f"stack labels must be strictly increasing: {a!r} before {b!r}")
        object.__setattr__(self, "layers", _readonly(layers))
        object.__setattr__(self, "labels", labels)

    @property
    def n_layers(self) -> int:
        return self.layers.shape[0]

    @property
    def mask(self) -> np.ndarray:
        return _nodata_mask(self.layers, self.header.nodata)

    def layer(self, index: int) -> Grid:
        return Grid.from_header(self.header, self.layers[index])

    def __eq__(self, other):
        if not isinstance(other, GridStack):
            return NotImplemented
        return (
            self.header == other.header
            and self.labels == other.labels
            and np.array_equal(self.layers, other.layers, equal_nan=True)
        )

    __hash__ = None


def _parse_header(lines: list[str], path) -> tuple[dict, int]:
    header: dict[str, str] = {}
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if not parts:
            i += 1
            continue
        if not parts[0][0].isalpha():
            break
        if len(parts) != 2:
            raise GridFormatError(f"{path}: malformed header line {lines[i]!r}")
        header[parts[0].lower()] = parts[1]
        i += 1
    if "xllcenter" in header and "xllcorner" not in header:
        half = float(header["cellsize"]) / 2 if "cellsize" in header else 0.0
        header["xllcorner"] = repr(float(header.pop("xllcenter")) - half)
    if "yllcenter" in header and "yllcorner" not in header:
        half = float(header["cellsize"]) / 2 if "cellsize" in header else 0.0
        header["yllcorner"] = repr(float(header.pop("yllcenter")) - half)
    for key in _HEADER_KEYS:
        if key not in header:
            raise GridFormatError(f"{path}: missing header key {key.upper()}")
    return header, i


def read_ascii_grid(path) -> Grid:
    """Read an ESRI ASCII grid.

    Header keys are matched case-insensitively.  ``XLLCENTER``/``YLLCENTER``
    are accepted and converted to corner coordinates.

    Raises
    ------
    GridFormatError
        If a required header key is missing or a value does not parse.
    ShapeError
        If the number of values differs from ``NCOLS * NROWS``.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    header, start = _parse_header(lines, path)
    try:
        ncols = int(header["ncols"])
        nrows = int(header["nrows"])
        xll = float(header["xllcorner"])
        yll = float(header["yllcorner"])
        cellsize = float(header["cellsize"])
        nodata = float(header["nodata_value"])
        tokens = " ".join(lines[start:]).split()
        values = np.array(tokens, dtype=np.float64)
    except ValueError as exc:
        raise GridFormatError(f"{path}: {exc}") from exc
    expected = ncols * nrows
    if values.size != expected:
        raise ShapeError(f"{path}: expected {expected} values, found {values.size}")
    return Grid(ncols, nrows, xll, yll, cellsize, nodata, values)


def write_ascii_grid(grid: Grid, path) -> None:
    """Write ``grid`` with 17 significant digits so that reading it back is exact."""
    with open(path, "w") as fh:
        fh.write(f"NCOLS {grid.ncols}\n")
        fh.write(f"NROWS {grid.nrows}\n")
        fh.write(f"XLLCORNER {FLOAT_FMT % grid.xll}\n")
        fh.write(f"YLLCORNER {FLOAT_FMT % grid.yll}\n")
        fh.write(f"CELLSIZE {FLOAT_FMT % grid.cellsize}\n")
        fh.write(f"NODATA_VALUE {FLOAT_FMT % grid.nodata}\n")
        np.savetxt(fh, grid.as_2d(), fmt=FLOAT_FMT, delimiter=" ")


def read_grid_stack(manifest_path) -> GridStack:
    """Read a stack from a ``layer_index,label,path`` manifest.

    Layer paths are resolved relative to the manifest's directory.
    """
    base = os.path.dirname(os.path.abspath(manifest_path))
    frame = pd.read_csv(manifest_path, dtype={"label": str, "path": str})
    if list(frame.columns) != MANIFEST_COLUMNS:
        raise ValidationError(
            f"{manifest_path}: manifest header must be {','.join(MANIFEST_COLUMNS)}, "
            f"got {','.join(frame.columns)}"
        )
    frame = frame.sort_values("layer_index")
    if len(frame) == 0:
        raise ShapeError(f"{manifest_path}: manifest lists no layers")
    grids = [read_ascii_grid(os.path.join(base, p)) for p in frame["path"]]
    header = grids[0].header
    for g, p in zip(grids, frame["path"]):
        if g.header != header:
            raise ShapeError(f"{manifest_path}: layer {p} has a different header")
    layers = np.vstack([g.values for g in grids])
    return GridStack(header, layers, tuple(frame["label"]))


def write_grid_stack(stack: GridStack, manifest_path, prefix: str = "layer") -> None:
    """Write one ``.asc`` per layer next to the manifest, then the manifest."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    os.makedirs(base, exist_ok=True)
    rows = []
    for i, label in enumerate(stack.labels):
        name = f"{prefix}_{i:04d}.asc"
        write_ascii_grid(stack.layer(i), os.path.join(base, name))
        rows.append((i, label, name))
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# stations


class StationTable:
    """Point observations from weather stations.

    Wraps a DataFrame with columns ``station_id, lat, lon, date, variable,
    value``.  Construction validates ranges, duplicate keys, ``tmax >= tmin``
    and non-negative precipitation.
    """

    def __init__(self, frame: pd.DataFrame):
        missing = [c for c in STATION_COLUMNS if c not in frame.columns]
        if missing:
            raise ValidationError(f"station table is missing columns: {', '.join(missing)}")
        frame = frame[STATION_COLUMNS].copy()
        frame["station_id"] = frame["station_id"].astype(str)
        frame["date"] = frame["date"].astype(str)
        frame["variable"] = frame["variable"].astype(str)
        frame["lat"] = frame["lat"].astype(np.float64)
        frame["lon"] = frame["lon"].astype(np.float64)
        frame["value"] = frame["value"].astype(np.float64)
        self._validate(frame)
        self.frame = frame.reset_index(drop=True)

    @staticmethod
    def _validate(frame):
        bad_var = ~frame["variable"].isin(STATION_VARIABLES)
        if bad_var.any():
            row = frame[bad_var].iloc[0]
            raise ValidationError(
                f"unknown variable {row['variable']!r} for station {row['station_id']} "
                f"(expected one of {', '.join(STATION_VARIABLES)})"
            )
        bad = (frame["lat"].abs() > 90) | frame["lat"].isna()
        if bad.any():
            row = frame[bad].iloc[0]
            raise ValidationError(f"latitude {row['lat']} out of range [-90, 90] for station {row['station_id']}")
        bad = (frame["lon"].abs() > 180) | frame["lon"].isna()
        if bad.any():
            row = frame[bad].iloc[0]
            raise ValidationError(f"longitude {row['lon']} out of range [-180, 180] for station {row['station_id']}")
        parsed = pd.to_datetime(frame["date"], format="%Y-%m-%d", errors="coerce")
        if parsed.isna().any():
            row = frame[parsed.isna()].iloc[0]
            raise ValidationError(f"date {row['date']!r} for station {row['station_id']} is not YYYY-MM-DD")
        if not np.isfinite(frame["value"]).all():
            row = frame[~np.isfinite(frame["value"])].iloc[0]
            raise ValidationError(f"non-finite value for station {row['station_id']} on {row['date']}")
        dup = frame.duplicated(["station_id", "date", "variable"], keep=False)
        if dup.any():
            row = frame[dup].iloc[0]
            raise ValidationError(
                f"duplicate station record ({row['station_id']}, {row['date']}, {row['variable']})"
            )
        ppt = frame[frame["variable"] == "ppt"]
        if (ppt["value"] < 0).any():
            row = ppt[ppt["value"] < 0].iloc[0]
            raise ValidationError(f"negative precipitation at station {row['station_id']} on {row['date']}")
        temps = frame[frame["variable"].isin(("tmax", "tmin"))]
        if len(temps):
            wide = temps.pivot(index=["station_id", "date"], columns="variable", values="value")
            if "tmax" in wide and "tmin" in wide:
                bad = wide["tmin"] > wide["tmax"]
                if bad.any():
                    sid, date = wide.index[bad.to_numpy()][0]
                    raise ValidationError(f"tmin exceeds tmax at station {sid} on {date}")

    def __len__(self):
        return len(self.frame)

    def __eq__(self, other):
        if not isinstance(other, StationTable):
            return NotImplemented
        return self.frame.equals(other.frame)

    __hash__ = None

    def select(self, date: str, variable: str) -> pd.DataFrame:
        """Records for one date and variable, sorted by station id."""
        sel = self.frame[(self.frame["date"] == str(date)) & (self.frame["variable"] == variable)]
        return sel.sort_values("station_id", kind="mergesort").reset_index(drop=True)


def read_stations_csv(path) -> StationTable:
    """Read a stations CSV whose header is exactly ``station_id,lat,lon,date,variable,value``."""
    frame = pd.read_csv(
        path,
        dtype={"station_id": str, "date": str, "variable": str},
        float_precision="round_trip",
    )
    if list(frame.columns) != STATION_COLUMNS:
        raise ValidationError(
            f"{path}: header must be {','.join(STATION_COLUMNS)}, got {','.join(map(str, frame.columns))}"
        )
    return StationTable(frame)


def write_stations_csv(table: StationTable, path) -> None:
    table.frame.to_csv(path, index=False, float_format=FLOAT_FMT)


# ---------------------------------------------------------------------------
# panels


class PanelTable:
    """Unit-by-year panel: ``unit_id, year, y`` plus any number of named columns.

    Extra columns may be numeric regressors or categorical identifiers
    (e.g. ``state``) used for fixed effects and clustering.
    """

    def __init__(self, frame: pd.DataFrame):
        for col in ("unit_id", "year", "y"):
            if col not in frame.columns:
                raise ValidationError(f"panel is missing required column {col!r}")
        frame = frame.copy()
        frame["unit_id"] = frame["unit_id"].astype(str)
        years = pd.to_numeric(frame["year"], errors="coerce")
        if years.isna().any() or (years != np.floor(years)).any():
            raise ValidationError("panel column 'year' must hold integers")
        frame["year"] = years.astype(np.int64)
        frame["y"] = pd.to_numeric(frame["y"], errors="coerce").astype(np.float64)
        dup = frame.duplicated(["unit_id", "year"], keep=False)
        if dup.any():
            row = frame[dup].iloc[0]
            raise ValidationError(f"duplicate panel key (unit_id={row['unit_id']}, year={row['year']})")
        self.frame = frame.reset_index(drop=True)

    def __len__(self):
        return len(self.frame)

    def __eq__(self, other):
        if not isinstance(other, PanelTable):
            return NotImplemented
        return self.frame.equals(other.frame)

    __hash__ = None

    @property
    def columns(self) -> list[str]:
        return list(self.frame.columns)

    @property
    def units(self) -> np.ndarray:
        return np.unique(self.frame["unit_id"].to_numpy())

    @property
    def years(self) -> np.ndarray:
        return np.unique(self.frame["year"].to_numpy())

    def is_balanced(self) -> bool:
        return len(self.frame) == len(self.units) * len(self.years)

    def missing_pairs(self) -> list[tuple[str, int]]:
        """(unit, year) combinations absent from an otherwise rectangular panel."""
        full = pd.MultiIndex.from_product([self.units, self.years], names=["unit_id", "year"])
        have = pd.MultiIndex.from_frame(self.frame[["unit_id", "year"]])
        return list(full.difference(have))

    def require_panel_shape(self):
        if len(self.units) < 2 or len(self.years) < 2:
            raise ValidationError(
                f"panel estimators need at least 2 units and 2 periods, "
                f"got {len(self.units)} units and {len(self.years)} periods"
            )

    def with_columns(self, **columns) -> "PanelTable":
        frame = self.frame.copy()
        for name, values in columns.items():
            frame[name] = values
        return PanelTable(frame)


def read_panel_csv(path) -> PanelTable:
    """Read a panel CSV; the header must start with ``unit_id,year,y``."""
    frame = pd.read_csv(path, dtype={"unit_id": str}, float_precision="round_trip")
    if list(frame.columns[:3]) != ["unit_id", "year", "y"]:
        raise ValidationError(
            f"{path}: header must start with unit_id,year,y, got {','.join(map(str, frame.columns))}"
        )
    return PanelTable(frame)


def write_panel_csv(panel: PanelTable, path) -> None:
    # shortest round-trip repr: exact, and 1.0 stays a float on re-read
    panel.frame.to_csv(path, index=False)


# ---------------------------------------------------------------------------
# administrative units


class AdminUnits:
    """Administrative units defined as weighted lists of grid cells.

    Parameters
    ----------
    unit_ids : sequence of str
    cells : sequence of int arrays
        Row-major cell indices of each unit.
    weights : sequence of float arrays
        Membership weights (e.g. area shares) per cell.  Each nonempty list
        must sum to 1; use :meth:`from_membership` to normalize raw shares.
    centroids : array_like, shape (n_units, 2), optional
        ``(lat, lon)`` per unit; NaN when unknown.
    """

    def __init__(self, unit_ids: Sequence[str], cells, weights, centroids=None, n_cells: int | None = None):
        self.unit_ids = tuple(str(u) for u in unit_ids)
        if len(set(self.unit_ids)) != len(self.unit_ids):
            raise ValidationError("duplicate unit_id in admin units")
        if len(cells) != len(self.unit_ids) or len(weights) != len(self.unit_ids):
            raise ShapeError("cells and weights must have one entry per unit")
        self.cells = tuple(np.asarray(c, dtype=np.int64) for c in cells)
        self.weights = tuple(np.asarray(w, dtype=np.float64) for w in weights)
        for uid, c, w in zip(self.unit_ids, self.cells, self.weights):
            if c.shape != w.shape:
                raise ShapeError(f"unit {uid}: {c.size} cells but {w.size} weights")
            if (w < 0).any() or not np.isfinite(w).all():
                raise ValidationError(f"unit {uid}: cell weights must be finite and >= 0")
            if (c < 0).any() or (n_cells is not None and (c >= n_cells).any()):
                raise ValidationError(f"unit {uid}: cell index outside grid bounds")
            if len(np.unique(c)) != len(c):
                raise ValidationError(f"unit {uid}: duplicate cell index")
            if c.size and abs(w.sum() - 1.0) > 1e-9:
                raise ValidationError(f"unit {uid}: cell weights sum to {w.sum()!r}, expected 1")
        if centroids is None:
            centroids = np.full((len(self.unit_ids), 2), np.nan)
        self.centroids = np.asarray(centroids, dtype=np.float64).reshape(len(self.unit_ids), 2)
        self.n_cells = n_cells

    @classmethod
    def from_membership(cls, unit_ids, cells, shares=None, centroids=None, n_cells=None) -> "AdminUnits":
        """Build units from raw (unnormalized) shares; equal shares when omitted."""
        weights = []
        for c, s in zip(cells, shares if shares is not None else [None] * len(cells)):
            c = np.asarray(c)
            s = np.ones(c.size) if s is None else np.asarray(s, dtype=np.float64)
            total = s.sum()
            weights.append(s / total if total > 0 else s)
        return cls(unit_ids, cells, weights, centroids=centroids, n_cells=n_cells)

    def __len__(self):
        return len(self.unit_ids)

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        rows = np.concatenate([np.full(c.size, i) for i, c in enumerate(self.cells)] or [np.empty(0, int)])
        cols = np.concatenate(self.cells or [np.empty(0, int)])
        vals = np.concatenate(self.weights or [np.empty(0)])
        return rows.astype(np.int64), cols.astype(np.int64), vals


def _read_triplets(path):
    frame = pd.read_csv(path, dtype={"unit_id": str}, float_precision="round_trip")
    if list(frame.columns) != ADMIN_COLUMNS:
        raise ValidationError(
            f"{path}: header must be {','.join(ADMIN_COLUMNS)}, got {','.join(map(str, frame.columns))}"
        )
    order = list(dict.fromkeys(frame["unit_id"]))
    cells, weights = [], []
    for uid, group in frame.groupby("unit_id", sort=False):
        group = group[group["cell_index"] >= 0]
        cells.append(group["cell_index"].to_numpy(np.int64))
        weights.append(group["weight"].to_numpy(np.float64))
    return order, cells, weights


def read_admin_csv(path, n_cells: int | None = None, normalize: bool = True) -> AdminUnits:
    """Read ``unit_id,cell_index,weight`` triplets into :class:`AdminUnits`.

    A row with ``cell_index = -1`` declares a unit that covers no cells.
    """
    order, cells, weights = _read_triplets(path)
    if normalize:
        return AdminUnits.from_membership(order, cells, weights, n_cells=n_cells)
    return AdminUnits(order, cells, weights, n_cells=n_cells)


def _write_triplets(path, unit_ids, cells, weights):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ADMIN_COLUMNS)
        for uid, c, w in zip(unit_ids, cells, weights):
            if len(c) == 0:
                writer.writerow([uid, -1, "0"])
            for ci, wi in zip(c, w):
                writer.writerow([uid, int(ci), FLOAT_FMT % wi])


def write_admin_csv(units: AdminUnits, path) -> None:
    _write_triplets(path, units.unit_ids, units.cells, units.weights)
