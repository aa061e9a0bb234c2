import pytest

from mrbsde.simulation import build_grid, simulate_brownian

SEED = 20240501


@pytest.fixture(scope="session")
def grid64():
    return build_grid(1.0, 64)


@pytest.fixture(scope="session")
def ensemble(grid64):
    """Desk-scale ensemble shared by the oracle tests (M = 1e5, N = 64)."""
    return simulate_brownian(grid64, 100_000, seed=SEED)


@pytest.fixture(scope="session")
def small_ensemble():
    return simulate_brownian(build_grid(1.0, 16), 20_000, seed=7)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}")
