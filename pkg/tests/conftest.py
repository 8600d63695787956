import contextlib
import os

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=500,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_CRITERIA: dict = {}


@pytest.fixture
def criterion():
    """``with criterion(n, title) as info:`` records PASS when the block
    finishes and FAIL when it raises; ``info["detail"]`` is printed too."""

    @contextlib.contextmanager
    def rec(num, title):
        info = {"detail": ""}
        status = "FAIL"
        try:
            yield info
            status = "PASS"
        finally:
            # parametrised criteria merge: any failing case fails the criterion
            prev = _CRITERIA.get(num)
            if prev is not None:
                status = "FAIL" if "FAIL" in (prev[0], status) else "PASS"
                detail = "; ".join(x for x in (prev[2], info["detail"]) if x)
            else:
                detail = info["detail"]
            _CRITERIA[num] = (status, title, detail)

    return rec


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        status, title, detail = _CRITERIA[num]
        line = f"{status}  [{num:2d}] {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
