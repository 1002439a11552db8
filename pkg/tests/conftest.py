import pytest

from mlgspt.model import ParamSet


@pytest.fixture(scope="session")
def p43():
    return ParamSet(g_syn=4.3)


@pytest.fixture(scope="session")
def p44():
    return ParamSet(g_syn=4.4)


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(b), floor)


# one summary line per acceptance criterion, filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
