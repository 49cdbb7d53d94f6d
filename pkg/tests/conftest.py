import time
from contextlib import contextmanager

ACCEPTANCE: list[str] = []


@contextmanager
def criterion(number: int, title: str, limit: float | None = None):
    """Record one PASS/FAIL line for an acceptance criterion, including its runtime."""
    start = time.perf_counter()
    ok = False
    try:
        yield
        ok = True
    finally:
        took = time.perf_counter() - start
        in_time = limit is None or took < limit
        budget = f", limit {limit:g}s" if limit is not None else ""
        verdict = "PASS" if ok and in_time else "FAIL"
        ACCEPTANCE.append(f"{verdict} criterion {number}: {title} ({took:.2f}s{budget})")
    assert in_time, f"criterion {number} took {took:.2f}s, limit {limit}s"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
