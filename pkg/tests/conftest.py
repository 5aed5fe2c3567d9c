import pytest

# criterion number -> (passed, detail); filled by the acceptance tests
ACCEPTANCE = {}


@pytest.fixture
def gate():
    """Record one acceptance line per criterion: ``gate(n, checks)``.

    ``checks`` maps a label to ``(value, ok)``.  The test fails if any check
    fails; the summary line lists every value.
    """
    def record(number, checks):
        ok = all(bool(flag) for _, flag in checks.values())
        detail = "; ".join(f"{k}={_fmt(v)}" for k, (v, _) in checks.items())
        ACCEPTANCE[number] = (ok, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        bad = [k for k, (_, flag) in checks.items() if not flag]
        assert not bad, f"criterion {number} failed checks: {bad}"
    return record


def _fmt(v):
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    try:
        return f"{float(v):.3g}"
    except (TypeError, ValueError):
        return str(v)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
