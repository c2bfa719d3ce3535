"""Acceptance suite: one PASS/FAIL line per criterion, printed as it runs.

Criteria 7 and 12 contain honest failures on this machine (see README).
"""

import pytest

from ou_spectra.selftest import CRITERIA


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    result = CRITERIA[number](seed=0)
    with capsys.disabled():
        print("\n" + result.line(), flush=True)
    assert result.passed, result.detail
