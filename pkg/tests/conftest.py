import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "wavescore", max_examples=30, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
# pytest --hypothesis-profile=stress for a longer search
settings.register_profile(
    "stress", max_examples=400, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("wavescore")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


def record(n, ok, desc, detail):
    """Record one check of criterion ``n``; several checks are AND-ed."""
    if n in ACCEPTANCE:
        ok0, _, detail0 = ACCEPTANCE[n]
        ok, detail = ok0 and ok, f"{detail0}; {detail}"
    ACCEPTANCE[n] = (bool(ok), desc, detail)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, desc, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {desc}  [{detail}]")
