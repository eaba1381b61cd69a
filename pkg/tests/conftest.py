import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary ---------------------------------------------------------

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """record(k, ok, detail): one PASS/FAIL line per acceptance criterion,
    printed immediately and again in the terminal summary."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def record(k, ok, detail):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines[k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
