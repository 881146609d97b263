import numpy as np
import pytest

_ACCEPTANCE = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def acceptance_line():
    """Register one PASS/FAIL summary line per acceptance criterion."""

    def record(number, title, passed, detail, runtime_s, limit_s):
        ok = bool(passed) and runtime_s <= limit_s
        _ACCEPTANCE.append(
            (number, f"[{'PASS' if ok else 'FAIL'}] AC{number:<2d} {title}: {detail} "
                     f"(runtime {runtime_s:.1f}s, limit {limit_s:.0f}s)")
        )
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
