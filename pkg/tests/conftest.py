import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_COUNT = 11
_ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """``record(n, ok, detail)`` logs one PASS/FAIL line for acceptance criterion ``n``."""
    results = request.config.stash[_ACCEPTANCE]

    def record(n: int, ok: bool, detail: str) -> None:
        line = f"criterion {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"
        results[n] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        terminalreporter.write_line(results.get(n, f"criterion {n:>2} FAIL: did not run to completion"))
