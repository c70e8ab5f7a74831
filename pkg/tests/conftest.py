import pytest

from mdev.model import Grid, get_model


@pytest.fixture
def linear():
    return get_model("linear-sin")


@pytest.fixture
def sine():
    return get_model("nonlinear-sin")


@pytest.fixture
def ortho():
    return get_model("ortho-2d")


@pytest.fixture
def grid():
    return Grid(4096)


@pytest.fixture
def small_grid():
    return Grid(64)


def pytest_terminal_summary(terminalreporter):
    from mcutil import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        checks = ACCEPTANCE[k]
        ok = all(p for _, p, _ in checks)
        failed = [n for n, p, _ in checks if not p]
        note = f" (failed: {', '.join(failed)})" if failed else ""
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}{note}")
