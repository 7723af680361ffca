import numpy as np
import pytest
from hypothesis import settings

from evoldp.games import CongestionGame, three_link_congestion_game
from evoldp.logit_potential import potential_game

settings.register_profile("repo", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("repo")


@pytest.fixture
def links3():
    return three_link_congestion_game()


@pytest.fixture
def links2():
    """Two parallel links with delays 1 + 8u and 2 + 4u."""
    return CongestionGame(([1, 8], [2, 4]), np.eye(2))


@pytest.fixture
def pg3(links3):
    return potential_game(links3)


@pytest.fixture
def pg2(links2):
    return potential_game(links2)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one line per acceptance criterion, echoed in the terminal summary."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
