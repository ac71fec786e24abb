from pathlib import Path

import numpy as np
import pytest

from layerfmm.layers import LayerStack
from layerfmm.sommerfeld import RuleBook

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

STACKS = {
    "ex1": ((0.0, 1.0, 2.0, 3.0), (3.2, 2.5, 5.1, 8.6, 6.9), (1.0, 2.0, 3.0, 4.0, 5.0)),
    "ex2": ((0.0, 1.0, 2.0, 3.0, 4.0), (1.2, 2.3, 4.5, 6.1, 7.7, 10.0), (1.1, 2.3, 3.4, 4.6, 5.0, 6.6)),
    "ex3": ((0.0, 1.0, 2.0, 3.0, 4.0), (2.0, 3.0, 6.0, 5.0, 8.0, 10.0), (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)),
}


def make_stack(name):
    return LayerStack(*STACKS[name])


@pytest.fixture(scope="session")
def ex1_stack():
    return make_stack("ex1")


@pytest.fixture(scope="session")
def ex1_book(ex1_stack):
    return RuleBook(ex1_stack)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = pytest.StashKey()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def emit(number, title, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {number}: {title}: {detail}"
        lines.append(line)
        print(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
