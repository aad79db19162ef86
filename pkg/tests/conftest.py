import numpy as np
import pytest

from lpvcert.conditions import case_study


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def case():
    return case_study


# one summary line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record():
    def _record(num: int, ok: bool, detail: str) -> None:
        ACCEPTANCE[num] = (ok, detail)
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, 8):
        if num in ACCEPTANCE:
            ok, detail = ACCEPTANCE[num]
            terminalreporter.write_line(f"criterion {num}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {num}: NOT RUN")
