import pytest
from hypothesis import HealthCheck, settings

from teleopsim import config as cf

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def small_config():
    """One material, one repetition: enough to exercise every study quickly."""
    return cf.load(overrides={
        "materials": {"count": 1},
        "repetitions": 1,
        "open_loop": {"estimators": ["fs", "d"]},
        "closed_loop": {"estimators": ["fs", "vs"], "axes": ["z"], "popc": "both"},
        "refit": {"axes": ["z"], "original": {"repetitions": 2},
                  "train": {"epochs": 3}},
    })


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def report(request):
    """Record one acceptance line; printed again in the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def _report(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines.append((number, line))
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
