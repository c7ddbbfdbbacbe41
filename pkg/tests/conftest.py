import numpy as np
import pytest

from rescrb.res_model import RESParams, toeplitz_scatter

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def toeplitz8():
    return RESParams(np.ones(8), toeplitz_scatter(8, 0.8), constrained=True)


def random_spd(rng, n, cond=None):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    if cond is None:
        w = rng.uniform(0.5, 2.0, n)
    else:
        w = np.geomspace(1.0, cond, n)
    return (q * w) @ q.T


@pytest.fixture
def acceptance_log():
    def record(name: str, passed: bool, detail: str) -> None:
        _ACCEPTANCE.append((name, passed, detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
