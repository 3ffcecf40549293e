import json
import pathlib
import sys

import numpy as np
import pytest

from percycle.bounds import build_box
from percycle.model import ParamSet, goldbeter_example
from percycle.solver import shoot_in_box

HERE = pathlib.Path(__file__).parent
sys.path.insert(0, str(HERE))

from oracles.reference_model import CONSTANT_SET  # noqa: E402


def load_fixture(name):
    return json.loads((HERE / "fixtures" / name).read_text())


@pytest.fixture(scope="session")
def example():
    return goldbeter_example()


@pytest.fixture(scope="session")
def constant_params():
    return ParamSet.from_mapping(CONSTANT_SET)


@pytest.fixture(scope="session")
def example_box(example):
    return build_box(example)


@pytest.fixture(scope="session")
def example_orbit(example, example_box):
    """(orbit, verification, attempts) from the multi-start shooting driver."""
    return shoot_in_box(example, example_box)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None) if mod else None
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
