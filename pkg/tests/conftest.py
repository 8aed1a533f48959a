import math

import pytest

from mitd.model import make_table_model

# TOY-1: V = {a, b}; rows for the empty prefix and the two length-1
# prefixes, forced EOS after two symbols.
TOY1_SPEC = {
    "": {"a": 0.55, "b": 0.35, "EOS": 0.10},
    "a": {"a": 0.5, "b": 0.3, "EOS": 0.2},
    "b": {"a": 0.05, "b": 0.05, "EOS": 0.9},
}

# Complete-hypothesis probabilities, multiplied out by hand from TOY1_SPEC.
TOY1_ENUMERATION = {
    "": 0.10,
    "a": 0.55 * 0.2,
    "b": 0.35 * 0.9,
    "aa": 0.55 * 0.5,
    "ab": 0.55 * 0.3,
    "ba": 0.35 * 0.05,
    "bb": 0.35 * 0.05,
}


@pytest.fixture
def toy1():
    return make_table_model(TOY1_SPEC, depth=2)


def ids(model, text):
    return tuple(model.symbols.index(ch) for ch in text)


def toy1_log_prob(text):
    return math.log(TOY1_ENUMERATION[text])


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
