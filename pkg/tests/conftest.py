import os
import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

from websess.calculus import load_world  # noqa: E402
from websess.cli import corpus_dir, corpus_names  # noqa: E402

_CACHE = {}


def corpus_world(name):
    if name not in _CACHE:
        _CACHE[name] = load_world(Path(str(corpus_dir() / f"{name}.ws")))
    return _CACHE[name]


@pytest.fixture(params=corpus_names())
def any_world(request):
    return corpus_world(request.param)


@pytest.fixture
def world():
    return corpus_world


# acceptance lines, printed after the run regardless of capture
ACCEPTANCE: list[str] = []


def pytest_collection_modifyitems(items):
    # acceptance goes last so it can reuse generated-case counts from this session
    items.sort(key=lambda it: it.module.__name__ == "test_acceptance")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
