"""Runs every acceptance criterion at its stated tolerance.

One PASS/FAIL line per criterion is written to the terminal even without
``-s``.  The whole module takes well over an hour on one core; deselect it
with ``-m "not acceptance"`` for a quick run.
"""

import pytest

from membrane_pinning.acceptance import CRITERIA, format_line, run_criterion

pytestmark = pytest.mark.acceptance


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    res = run_criterion(number)
    with capsys.disabled():
        print("\n" + format_line(res))
    assert res.passed, res.detail
