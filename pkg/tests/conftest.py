import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def central_diff(f, x, rel=1e-5, abs_floor=1e-7):
    """Central finite-difference gradient of a scalar function of a vector."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = max(abs(x[i]) * rel, abs_floor) if rel else abs_floor
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-5, atol=1e-6):
    """Relative agreement, with an absolute floor for near-zero components."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.abs(numeric), atol / rtol)
    err = np.abs(analytic - numeric) / scale
    assert np.all(err <= rtol), f"max relative error {err.max():.3g}\n{analytic}\n{numeric}"


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report(capsys):
    """Record one PASS/FAIL line per acceptance criterion.

    Lines are echoed as they happen and repeated in the terminal summary.
    """
    def record(criterion, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  criterion {criterion}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line, flush=True)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
