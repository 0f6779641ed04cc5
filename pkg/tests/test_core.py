import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from agropanel.core import (
    AdminUnits, Grid, GridHeader, GridStack, PanelTable, StationTable, read_admin_csv, read_ascii_grid,
    read_grid_stack, read_panel_csv, read_stations_csv, write_admin_csv, write_ascii_grid, write_grid_stack,
    write_panel_csv, write_stations_csv,
)
from agropanel.exceptions import GridFormatError, ShapeError, ValidationError


def _write(path, text):
    path.write_text(text)
    return path


def test_read_one_cell_grid(tmp_path):
    p = _write(tmp_path / "a.asc", "NCOLS 1\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n5.0\n")
    g = read_ascii_grid(p)
    assert (g.ncols, g.nrows) == (1, 1)
    assert g.values.tolist() == [5.0]


def test_nodata_cell_flagged(tmp_path):
    p = _write(tmp_path / "a.asc", "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value -9999\n1 2\n-9999 4\n")
    g = read_ascii_grid(p)
    assert g.mask.tolist() == [False, False, True, False]
    assert np.isnan(g.masked()[2])


def test_missing_header_key_named(tmp_path):
    p = _write(tmp_path / "a.asc", "NCOLS 1\nNROWS 1\nXLLCORNER 0\nYLLCORNER 0\nNODATA_VALUE -9999\n5\n")
    with pytest.raises(GridFormatError, match="CELLSIZE"):
        read_ascii_grid(p)


def test_wrong_value_count_reports_both(tmp_path):
    p = _write(tmp_path / "a.asc", "NCOLS 2\nNROWS 2\nXLLCORNER 0\nYLLCORNER 0\nCELLSIZE 1\nNODATA_VALUE -9999\n1 2 3\n")
    with pytest.raises(ShapeError, match="expected 4 values, found 3"):
        read_ascii_grid(p)


def test_center_coordinates_header_variant(tmp_path):
    p = _write(tmp_path / "a.asc", "NCOLS 1\nNROWS 1\nXLLCENTER 0.5\nYLLCENTER 10.5\nCELLSIZE 1\nNODATA_VALUE -9999\n5\n")
    g = read_ascii_grid(p)
    assert (g.xll, g.yll) == (0.0, 10.0)


def test_empty_grid_rejected():
    with pytest.raises(ShapeError):
        Grid(1, 1, 0, 0, 1, -9999, [])


def test_nodata_only_grid_round_trips(tmp_path):
    g = Grid(3, 2, 0, 0, 1, -9999, np.full(6, -9999.0))
    write_ascii_grid(g, tmp_path / "n.asc")
    assert read_ascii_grid(tmp_path / "n.asc") == g


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, 100, elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_grid_round_trip_is_bitwise(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("g") / "r.asc"
    g = Grid(10, 10, -100.123456789, 33.1, 0.041666666666666664, -9999, np.where(values == -9999, 0, values))
    write_ascii_grid(g, path)
    back = read_ascii_grid(path)
    assert back == g
    assert back.values.tobytes() == g.values.tobytes()


def test_cell_center_matches_hand_computed_corners():
    h = GridHeader(ncols=4, nrows=3, xll=-100.0, yll=30.0, cellsize=0.5)
    assert h.cell_center(0, 0) == (-99.75, 31.25)  # north-west
    assert h.cell_center(2, 3) == (-98.25, 30.25)  # south-east
    x, y = h.cell_centers()
    assert (x[0], y[0]) == h.cell_center(0, 0)
    assert (x[-1], y[-1]) == h.cell_center(2, 3)
    assert h.cell_index(-98.25, 30.25) == 11


def test_grid_is_immutable():
    g = Grid(1, 1, 0, 0, 1, -9999, [1.0])
    with pytest.raises(ValueError):
        g.values[0] = 2.0


def test_stack_round_trip(tmp_path):
    h = GridHeader(3, 2, 0, 0, 1)
    stack = GridStack(h, np.arange(12.0).reshape(2, 6) / 7, ("2000-04-01", "2000-04-02"))
    write_grid_stack(stack, tmp_path / "s" / "m.csv")
    assert read_grid_stack(tmp_path / "s" / "m.csv") == stack


def test_stack_labels_must_increase():
    h = GridHeader(1, 1, 0, 0, 1)
    with pytest.raises(ValidationError):
        GridStack(h, np.zeros((2, 1)), ("b", "a"))


STATION_HEADER = "station_id,lat,lon,date,variable,value\n"


def test_one_station_row(tmp_path):
    p = _write(tmp_path / "s.csv", STATION_HEADER + "A,40,-90,2000-01-01,tmax,10\n")
    assert len(read_stations_csv(p)) == 1


def test_duplicate_station_key_rejected(tmp_path):
    p = _write(tmp_path / "s.csv", STATION_HEADER + "A,40,-90,2000-01-01,tmax,10\nA,40,-90,2000-01-01,tmax,11\n")
    with pytest.raises(ValidationError, match="A, 2000-01-01, tmax"):
        read_stations_csv(p)


def test_tmin_above_tmax_names_station_and_date(tmp_path):
    p = _write(tmp_path / "s.csv", STATION_HEADER + "B7,40,-90,2001-05-03,tmax,10\nB7,40,-90,2001-05-03,tmin,12\n")
    with pytest.raises(ValidationError, match="B7 on 2001-05-03"):
        read_stations_csv(p)


@pytest.mark.parametrize("row, msg", [
    ("A,91,-90,2000-01-01,tmax,1", "latitude"),
    ("A,40,-181,2000-01-01,tmax,1", "longitude"),
    ("A,40,-90,2000-01-01,ppt,-1", "negative precipitation"),
    ("A,40,-90,2000-13-01,tmax,1", "not YYYY-MM-DD"),
    ("A,40,-90,2000-01-01,wind,1", "unknown variable"),
])
def test_station_validation(tmp_path, row, msg):
    p = _write(tmp_path / "s.csv", STATION_HEADER + row + "\n")
    with pytest.raises(ValidationError, match=msg):
        read_stations_csv(p)


def test_station_header_must_match(tmp_path):
    p = _write(tmp_path / "s.csv", "id,lat,lon,date,variable,value\nA,40,-90,2000-01-01,tmax,1\n")
    with pytest.raises(ValidationError, match="header"):
        read_stations_csv(p)


def test_stations_round_trip(tmp_path):
    frame = pd.DataFrame({"station_id": ["A", "B"], "lat": [40.1, 41.0], "lon": [-90.0, -91.3],
                          "date": ["2000-01-01"] * 2, "variable": ["tmax", "ppt"], "value": [1 / 3, 0.0]})
    t = StationTable(frame)
    write_stations_csv(t, tmp_path / "s.csv")
    assert read_stations_csv(tmp_path / "s.csv") == t


def test_panel_round_trip_and_duplicates(tmp_path):
    frame = pd.DataFrame({"unit_id": ["1", "1", "2"], "year": [2000, 2001, 2000], "y": [0.1, 1 / 3, 2.0],
                          "x": [1.0, 2.0, 3.0]})
    p = PanelTable(frame)
    write_panel_csv(p, tmp_path / "p.csv")
    back = read_panel_csv(tmp_path / "p.csv")
    assert back == p
    assert back.frame["unit_id"].tolist() == ["1", "1", "2"]
    assert not p.is_balanced()
    assert p.missing_pairs() == [("2", 2001)]
    with pytest.raises(ValidationError, match="unit_id=1, year=2000"):
        PanelTable(pd.concat([frame, frame.iloc[:1]]))


def test_panel_header_checked(tmp_path):
    p = _write(tmp_path / "p.csv", "year,unit_id,y\n2000,a,1\n")
    with pytest.raises(ValidationError):
        read_panel_csv(p)


def test_admin_units_round_trip(tmp_path):
    units = AdminUnits.from_membership(["a", "b", "c"], [[0, 1], [2], []], [[1, 3], [2], []], n_cells=4)
    assert units.weights[0].tolist() == [0.25, 0.75]
    write_admin_csv(units, tmp_path / "a.csv")
    back = read_admin_csv(tmp_path / "a.csv", n_cells=4)
    assert back.unit_ids == units.unit_ids
    for a, b in zip(back.weights, units.weights):
        assert np.array_equal(a, b)
    assert back.cells[2].size == 0


def test_admin_cell_out_of_bounds():
    with pytest.raises(ValidationError, match="outside grid bounds"):
        AdminUnits(["a"], [[5]], [[1.0]], n_cells=4)
