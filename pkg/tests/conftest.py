import os

import matplotlib
import pytest
from hypothesis import settings

matplotlib.use("Agg")

settings.register_profile("default", max_examples=60, deadline=None)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

N_CRITERIA = 11
_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Recorder for acceptance verdicts: ``acceptance(n, ok, detail)``."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(n, ok, detail=""):
        results[n] = (bool(ok), detail)
        print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in results:
            ok, detail = results[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
