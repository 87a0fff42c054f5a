import threading

import numpy as np
import pytest

from feqrboot import panel


class _SubgradientAudit:
    """Counts converged fits that violate the subgradient bounds, suite-wide."""

    def __init__(self):
        self.lock = threading.Lock()
        self.fits = 0
        self.violations = []

    def __call__(self, fit, data):
        if not fit.diagnostics.converged:
            return
        with self.lock:
            self.fits += 1
            if not fit.diagnostics.subgradient_report.satisfied:
                self.violations.append((data.n, data.T, data.p, fit.tau))


AUDIT = _SubgradientAudit()

# (criterion, "PASS"/"FAIL", detail) lines filled in by test_acceptance
ACCEPTANCE = []


def pytest_configure(config):
    panel.add_fit_observer(AUDIT)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    terminalreporter.write_line(
        f"subgradient audit: {AUDIT.fits} converged fits, {len(AUDIT.violations)} violations"
    )
    for num, verdict, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"acceptance {num:2d}: {verdict}  {detail}")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT.violations and session.exitstatus == 0:
        session.exitstatus = 1


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
