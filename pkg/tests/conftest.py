import pytest

from nvstimex.model import ModelParams, PulseTrain, PumpDrive, RateConstants

REFERENCE_RATES = RateConstants(l21=65.3e6, l23=18e6, l31=1e12)

_ACCEPTANCE = []


@pytest.fixture
def reference_rates():
    return REFERENCE_RATES


@pytest.fixture
def pump_power_high():
    """Highest-power curve of the pump-power experiment."""
    return ModelParams(REFERENCE_RATES, PumpDrive(141e6), PulseTrain(13e9, 100e-9, red2_rate=0.85e9))


@pytest.fixture
def record():
    """Collects one pass/fail line per acceptance criterion."""

    def _record(label, passed, detail):
        _ACCEPTANCE.append((label, bool(passed), detail))
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}")
