import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from spare.placement import build_placement  # noqa: E402


@pytest.fixture(scope="session")
def fig1_placement():
    """N=9, r=3 walk-through placement."""
    return build_placement(9, 3)


# criterion id -> (passed, detail); filled by test_acceptance
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    def record(cid: int, ok: bool, detail: str) -> None:
        ACCEPTANCE_RESULTS[cid] = (bool(ok), detail)
        print(f"criterion {cid}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
