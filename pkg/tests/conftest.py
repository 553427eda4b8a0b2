import math

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from folocate.desk import desk_model
from folocate.model import IbrDevice, SynchronousGenerator, SystemModel

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


_ACCEPTANCE: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    _ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])


@pytest.fixture(scope="session")
def desk():
    return desk_model()


@pytest.fixture
def two_machine():
    """Two generators on one line, one IBR watching their angle difference."""
    gens = [SynchronousGenerator("a", 0.05, 0.02, 1e-3, 1.0), SynchronousGenerator("b", 0.04, 0.015, 1e-3, 1.0)]
    ibr = IbrDevice("p", 10.0, 30.0, (0.5, -0.5, -0.8))
    return SystemModel(gens, [ibr], np.array([[0.5, -0.5], [-0.5, 0.5]]))


@pytest.fixture
def single_ibr():
    """An isolated generator plus an IBR whose v_q ignores every angle."""
    gen = SynchronousGenerator("g", 1.0, 1.0)
    ibr = IbrDevice("i", 50.0, 200.0, (0.0, 0.0))
    return SystemModel([gen], [ibr])


def sine(f, t, phase=0.0):
    return np.sin(2 * math.pi * f * t + phase)
