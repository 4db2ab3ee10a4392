import numpy as np
import pytest

from plcond import geometry
from plcond.conductivity import PiecewiseLinearConductivity


@pytest.fixture(scope="session")
def two_layer():
    return geometry.two_layer()


@pytest.fixture(scope="session")
def two_layer_mesh(two_layer):
    return geometry.triangulate(two_layer, 0.1)


@pytest.fixture(scope="session")
def affine_truth():
    return PiecewiseLinearConductivity([1.2, 2.0], [[0.2, -0.3], [-0.4, 0.5]], lambda_bound=4.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
