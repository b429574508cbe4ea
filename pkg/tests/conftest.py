import numpy as np
import pytest

from nsclab.grid import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid16():
    return make_grid(16, 2 * np.pi * 2)


# one summary line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[int, dict] = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(number: int, title: str, ok: bool, detail: str):
        entry = _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "details": []})
        entry["ok"] &= bool(ok)
        entry["details"].append(detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if e['ok'] else 'FAIL'} criterion {n}: {e['title']} | {'; '.join(e['details'])}")
