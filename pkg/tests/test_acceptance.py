"""Acceptance criteria 1-12; each test prints one PASS/FAIL line."""
import json

import pytest

from blowup_lab import acceptance


@pytest.mark.parametrize("check", acceptance.CHECKS, ids=lambda c: c.__name__)
def test_acceptance_criterion(check, capsys):
    result = check()
    with capsys.disabled():
        print(f"\n{result.line()} ({result.seconds:.1f} s)")
        print(json.dumps(result.detail, default=float, sort_keys=True))
    assert result.ok, result.detail
