"""Shared fixtures and the acceptance-criteria summary."""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from gentrees.data import read_dataset
from helpers import MIXED_CSV

ACCEPTANCE_RESULTS = {}


@contextmanager
def criterion(number: int, title: str, budget_s: float):
    """Record one acceptance criterion: pass when the body succeeds within ``budget_s`` seconds."""
    start = time.perf_counter()
    detail = {"note": ""}
    try:
        yield detail
    except BaseException as exc:
        ACCEPTANCE_RESULTS[number] = (title, False, time.perf_counter() - start, f"{type(exc).__name__}: {exc}".splitlines()[0])
        raise
    elapsed = time.perf_counter() - start
    ok = elapsed < budget_s
    note = detail["note"] if ok else f"runtime {elapsed:.1f}s exceeds {budget_s:.0f}s"
    ACCEPTANCE_RESULTS[number] = (title, ok, elapsed, note)
    assert ok, note


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, ok, elapsed, note = ACCEPTANCE_RESULTS[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} ({elapsed:6.1f}s) {title}"
        terminalreporter.write_line(f"{line}: {note}" if note else line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mixed():
    return read_dataset(MIXED_CSV)
