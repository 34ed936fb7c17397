"""Acceptance criteria 1-11, one test each, at the stated tolerances."""

import pytest

from feedinv.acceptance import CRITERIA, run_criterion

ACCEPTANCE_LINES: list[str] = []


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = run_criterion(number, threads=1)
    ACCEPTANCE_LINES.append(result.line())
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.detail
