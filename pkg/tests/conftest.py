"""Shared expensive runs and the acceptance summary printed after the session."""

from __future__ import annotations

import pytest

from imcflab import corpus
from imcflab import experiments as E

ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def prop1_linear():
    return E.run_prop1(corpus.linear(), E.Prop1Params(p_values=(2, 4, 8, 16), n=65))


@pytest.fixture(scope="session")
def prop1_angle():
    return E.run_prop1(corpus.normalized_angle(), E.Prop1Params(p_values=(8, 16, 32, 64), n=65))


@pytest.fixture(scope="session")
def angle_sweep():
    return E.run_angle_sweep()


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {msg}")
