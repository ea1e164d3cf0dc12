import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


GATE_LINES: dict[int, str] = {}


@pytest.fixture
def gate(request):
    """Record one PASS/FAIL line for an acceptance criterion.

    Returns ``report(number, title, passed, detail)``; a criterion whose test
    dies before reporting is recorded as FAIL.
    """
    reported = []

    def report(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
        GATE_LINES[number] = line
        reported.append(number)
        print(line)
        return passed

    yield report
    number = getattr(request.node.function, "criterion", None)
    if number is not None and number not in reported:
        GATE_LINES[number] = f"criterion {number} [FAIL] {request.node.name}: raised before reporting"


def pytest_terminal_summary(terminalreporter):
    if GATE_LINES:
        terminalreporter.section("acceptance gate")
        for number in sorted(GATE_LINES):
            terminalreporter.write_line(GATE_LINES[number])
