import numpy as np
import pytest

from modnash import bundled_game, bundled_games
from modnash.cli import load_problem
from modnash.model import build_quadratic_game
from modnash.prox import Quadratic, Zero

KAPPAS = [[1.0], [1.0]]
WEIGHTS = [[[0.0, 0.5]], [[0.5, 0.0]]]


@pytest.fixture
def quad2():
    phis = [Quadratic(1.0, [1.0]), Quadratic(1.0, [1.0])]
    return build_quadratic_game(KAPPAS, WEIGHTS, phis)


@pytest.fixture
def quad2_zero():
    return build_quadratic_game(KAPPAS, WEIGHTS, [Zero(1), Zero(1)])


@pytest.fixture(params=bundled_games())
def bundled(request):
    problem, config = load_problem(bundled_game(request.param))
    return request.param, problem, config


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def record_criterion(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
