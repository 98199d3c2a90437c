import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def orthonormal(rng, d, k=None):
    return np.linalg.qr(rng.standard_normal((d, k or d)))[0]


_ACCEPTANCE = {}


@pytest.fixture
def accept(request):
    """Record the outcome of one acceptance criterion: ``accept(n, ok, detail)``."""
    def record(n, ok, detail):
        _ACCEPTANCE[n] = (bool(ok), detail)
        assert ok, f"criterion {n} failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
