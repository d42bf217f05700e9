import numpy as np
import pytest

from neumann_bmo.corpus import CORPUS_PATH, load_corpus
from neumann_bmo.grid import GridSpec, ScalarField
from neumann_bmo.norms import ParabolicBallFamily

# (criterion, passed, detail) lines printed after the run
ACCEPTANCE = []


@pytest.fixture
def acceptance():
    def record(criterion: int, passed: bool, detail: str):
        ACCEPTANCE.append((criterion, bool(passed), detail))
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, passed, detail in sorted(ACCEPTANCE, key=lambda r: r[0]):
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def spec1():
    return GridSpec.graded(1, 4.0, 128, 32, 1.0)


@pytest.fixture(scope="session")
def spec2():
    return GridSpec.graded(2, 4.0, 64, 16, 1.0)


@pytest.fixture(scope="session")
def balls1(spec1):
    return ParabolicBallFamily.dyadic(spec1)


@pytest.fixture(scope="session")
def corpus():
    return load_corpus(CORPUS_PATH)


def gaussian_bump(spec, centre=1.0, width=0.5, amplitude=1.0):
    return ScalarField.from_function(
        spec, lambda *x: amplitude * np.exp(-((x[-1] - centre) / width) ** 2))
