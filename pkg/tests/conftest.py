"""Shared test setup.

Thread pinning happens before numpy is imported anywhere in the test
process so BLAS reductions are single-threaded and bit-stable across
runs. The acceptance tests register one-line verdicts that get echoed
after the run summary.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

_ACCEPTANCE_LINES = []


def record_acceptance(index: int, name: str, passed: bool, detail: str = ""):
    suffix = f" ({detail})" if detail else ""
    _ACCEPTANCE_LINES.append(
        (index, f"criterion {index:2d} [{'PASS' if passed else 'FAIL'}] {name}{suffix}")
    )


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
