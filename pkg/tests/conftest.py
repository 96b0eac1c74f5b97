import numpy as np
import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240521)


@pytest.fixture
def criterion():
    """Record one acceptance criterion, print its verdict, then assert it."""

    def record(label: str, ok: bool, detail: str = "") -> None:
        _CRITERIA.append((label, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {label} :: {detail}")
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label} :: {detail}")
