import numpy as np
import pytest

from commgap.envs import fig1_game

_ACCEPTANCE: dict[str, str] = {}


@pytest.fixture
def fig1():
    return fig1_game()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def verdict():
    """Record one summary line per acceptance criterion."""

    def record(criterion: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE[criterion] = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
        print(_ACCEPTANCE[criterion])

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[key])
