import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from calib.engine import ActuatorBox, FuelSettings, PlantParams, SurrogatePlant
from calib.geometry import CrankGrid, EngineGeometry
from calib.pcd import train_basis

settings.register_profile("calib", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("calib")


@pytest.fixture(scope="session")
def geom():
    return EngineGeometry()


@pytest.fixture(scope="session")
def grid():
    return CrankGrid()


@pytest.fixture(scope="session")
def plant(geom, grid):
    return SurrogatePlant(PlantParams(), geom, grid)


@pytest.fixture(scope="session")
def sweep_traces(plant):
    """Noisy cycles from a 5 x 5 sweep at mid-box fuel energy, two per setting."""
    box = ActuatorBox()
    rng = np.random.default_rng(11)
    out = []
    for br in np.linspace(*box.br, 5):
        for soi in np.linspace(*box.soi_di, 5):
            for _ in range(2):
                out.append(plant.cycle(FuelSettings(2000.0, br, soi), rng))
    return out


@pytest.fixture(scope="session")
def basis(sweep_traces, geom):
    return train_basis(sweep_traces, 8, 1.35, geom)


@pytest.fixture(scope="session")
def boot_basis():
    """Basis from the calibration loop's bootstrap sweep with default settings."""
    from calib.config import RunConfig
    from calib.loop import bootstrap

    return bootstrap(RunConfig())[0]


# --- acceptance report: one line per criterion at the end of the session ---

_criteria: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("measured", "")
        outcome = {"passed": "PASS", "failed": "FAIL"}.get(report.outcome, report.outcome.upper())
        _criteria[name] = (outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: (int(n.split("_")[2]), n)):
        outcome, detail = _criteria[name]
        label = name[len("test_criterion_"):].replace("_", " ")
        terminalreporter.write_line(f"{outcome:4}  criterion {label}: {detail}")
