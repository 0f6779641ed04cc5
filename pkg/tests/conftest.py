import numpy as np
import pandas as pd
import pytest

from agropanel.core import PanelTable


def random_panel(rng, n_units=20, n_years=10, n_x=2, drop=0.0, states=3):
    """Unit-by-year panel with random regressors, FE and noise; optionally unbalanced."""
    units = np.repeat([f"u{i:03d}" for i in range(n_units)], n_years)
    years = np.tile(np.arange(2000, 2000 + n_years), n_units)
    frame = pd.DataFrame({"unit_id": units, "year": years})
    frame["state"] = [f"s{int(u[1:]) % states}" for u in units]
    alpha = rng.normal(size=n_units)[np.repeat(np.arange(n_units), n_years)]
    delta = rng.normal(size=n_years)[np.tile(np.arange(n_years), n_units)]
    y = alpha + delta + rng.normal(size=len(frame))
    for j in range(n_x):
        x = rng.normal(size=len(frame)) + 0.5 * alpha
        frame[f"x{j}"] = x
        y = y + (j + 1) * x
    frame.insert(2, "y", y)
    if drop:
        keep = rng.random(len(frame)) >= drop
        frame = frame[keep]
    return PanelTable(frame.reset_index(drop=True))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one summary line per acceptance criterion, filled from test reports
_CRITERIA = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    n, text = props["criterion"]
    if report.when == "call" or report.failed:
        ok = report.passed and _CRITERIA.get(n, (True,))[0]
        _CRITERIA[n] = (ok, text, props.get("measured", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_CRITERIA):
        ok, text, measured = _CRITERIA[n]
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}"
        terminalreporter.write_line(line + (f"  [{measured}]" if measured else ""))
