"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed in the summary.

Run alone with ``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""
import sys

import pytest

from pgflow.verify import CRITERIA, TOLERANCES, Context

LINES: dict[int, str] = {}


@pytest.fixture(scope="module")
def ctx():
    return Context(dict(TOLERANCES))


def _describe(checks) -> str:
    parts = []
    for c in checks:
        mark = "ok" if c.passed else "FAILED"
        actual = f"{c.actual:.3g}" if isinstance(c.actual, float) else str(c.actual)
        tol = "" if c.tol is None else f" (tol {c.tol:g})"
        parts.append(f"{c.name} = {actual}{tol} {mark}")
    return "; ".join(parts)


def evaluate(number: int, name: str, ctx: Context) -> tuple[bool, str]:
    checks = CRITERIA[name](ctx)
    passed = bool(checks) and all(c.passed for c in checks)
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:2d} {name}: {_describe(checks)}"
    return passed, line


@pytest.mark.parametrize("number,name", list(enumerate(CRITERIA, start=1)), ids=list(CRITERIA))
def test_criterion(number, name, ctx):
    passed, line = evaluate(number, name, ctx)
    LINES[number] = line
    print(line)
    assert passed, line


def summary_lines() -> list[str]:
    return [LINES[k] for k in sorted(LINES)]


if __name__ == "__main__":
    context = Context(dict(TOLERANCES))
    ok = True
    for number, name in enumerate(CRITERIA, start=1):
        passed, line = evaluate(number, name, context)
        ok &= passed
        print(line, flush=True)
    sys.exit(0 if ok else 1)
