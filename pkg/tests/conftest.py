import json
from pathlib import Path

import numpy as np
import pytest

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def oracle():
    return json.loads((DATA / "bessel_oracle.json").read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_configuration(rng, n, spread=2.0):
    return rng.normal(scale=spread, size=n) + 1j * rng.normal(scale=spread, size=n)


VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion."""
    def record(number, title, passed, detail):
        VERDICTS[number] = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
