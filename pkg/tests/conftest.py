import warnings
from pathlib import Path

import numpy as np
import pytest

from groupdens.dataset import GroupedDataset
from groupdens.density_model import convert_summary_to_central_moments
from groupdens.em_fitter import FitConfig, fit
from groupdens.sim_harness import CUTS_J3, sample_truth, tabulate

ROOT = Path(__file__).resolve().parent.parent
CAR_CSV = ROOT / "data" / "car_insurance.csv"
CAR_CUTS = (0.0, 3.0, 4.3, 6.18)
CAR_FREQS = (1168, 2234, 116)
CAR_SUMMARY = ((2.462, 0.580, -1.793, 2.401),
               (3.529, 0.336, 0.375, -0.836),
               (4.556, 0.275, 2.603, 9.416))


def car_dataset(order: int = 4) -> GroupedDataset:
    moments = [convert_summary_to_central_moments(*row) for row in CAR_SUMMARY]
    return GroupedDataset(np.array(CAR_CUTS), np.array(CAR_FREQS), np.array(moments), 4,
                          "log10").with_order(order)


@pytest.fixture(scope="session")
def car_data():
    return car_dataset(4)


@pytest.fixture(scope="session")
def car_fit(car_data):
    return fit(car_data, FitConfig())


@pytest.fixture(scope="session")
def sim_data():
    """n=1000 sample of the mixture truth tabulated into the three classes."""
    return tabulate(sample_truth(1000, 11), CUTS_J3, 4)


@pytest.fixture(scope="session")
def sim_fit4(sim_data):
    return fit(sim_data, FitConfig())


@pytest.fixture(autouse=True)
def _quiet_flat_fit():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="flat fit")
        yield


STUDY_SEED = 2024
STUDY_S = 100


def _timed_study(order):
    import time

    from groupdens.sim_harness import run_study

    start = time.perf_counter()
    report = run_study(STUDY_S, 1000, CUTS_J3, order, seed=STUDY_SEED)
    return report, time.perf_counter() - start


@pytest.fixture(scope="session")
def study_r4():
    """Desk-scale study: S=100, n=1000, J=3, four moments; returns (report, seconds)."""
    return _timed_study(4)


@pytest.fixture(scope="session")
def study_r1():
    return _timed_study(1)


@pytest.fixture(scope="session")
def study_r2():
    return _timed_study(2)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion for the terminal summary."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
