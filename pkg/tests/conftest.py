import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hbsae.data import (DEFAULT_SCHEMA, AreaCovariateTable, CellFrame, CellKey, SurveyRecord,
                        link)
from hbsae.sim import SimConfig, simulated_dataset

settings.register_profile("hbsae", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hbsae")


def make_dataset(records, m=2, counts=None, covariates=None, schema=DEFAULT_SCHEMA):
    """Small linked dataset from (area_id, cell index, y, w) tuples."""
    area_ids = np.arange(1, m + 1)
    if counts is None:
        counts = np.full((m, schema.n_cells), 10)
    recs = [SurveyRecord(a, schema.decode(g), y, w) for a, g, y, w in records]
    cov = None
    if covariates is not None:
        names = tuple(covariates)
        vals = np.column_stack([covariates[k] for k in names])
        cov = AreaCovariateTable(area_ids, names, ("identity",) * len(names), vals)
    return link(recs, CellFrame(area_ids, counts, schema), cov)


@pytest.fixture(scope="session")
def sim_small():
    """A few hundred simulated records in 6 areas, one of them unsampled."""
    cfg = SimConfig(m=6, total_sample=250, seed=11)
    ds, pop = simulated_dataset(cfg)
    return ds


@pytest.fixture(scope="session")
def demo_dir():
    from importlib.resources import files
    return files("hbsae") / "fixtures" / "demo"


def key(race="White", eth="NonHispanic", gender="Male", age=1):
    return CellKey(race, eth, gender, age)


# one line per acceptance criterion, printed after the run so it survives output capture
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
