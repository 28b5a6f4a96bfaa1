"""Acceptance criteria, one test each.

Every criterion prints one ``criterion k [PASS|FAIL] ...`` line; the lines are
repeated in the pytest terminal summary.  Run this file directly to get just
the lines.
"""

import sys

import pytest

from actionangle.acceptance import CRITERIA, run_criterion

from conftest import ACCEPTANCE_LINES

TIME_LIMIT = 60.0


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number):
    result = run_criterion(number, seed=0)
    line = result.line()
    print(line)
    ACCEPTANCE_LINES.append(line)
    failing = [c.as_dict() for c in result.checks if not c.passed]
    assert result.passed, failing
    assert result.seconds <= TIME_LIMIT


if __name__ == "__main__":
    results = [run_criterion(k) for k in sorted(CRITERIA)]
    for r in results:
        print(r.line())
    sys.exit(0 if all(r.passed for r in results) else 1)
