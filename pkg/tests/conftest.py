import numpy as np
import pytest

# Verdict lines registered by the acceptance gate, replayed after the run
# summary so they are visible without -s.
_criterion_lines = []


def pytest_terminal_summary(terminalreporter):
    if _criterion_lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _criterion_lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    """Record one pass/fail line for an acceptance criterion, then assert."""

    def check(name, ok, detail=""):
        verdict = "PASS" if ok else "FAIL"
        line = f"{verdict}  {name}"
        if detail:
            line += f"  [{detail}]"
        _criterion_lines.append(line)
        assert ok, line

    return check


@pytest.fixture
def rng():
    return np.random.default_rng(0)
