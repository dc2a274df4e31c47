import pytest

from cmcphase.delaunay import delaunay_profile

ACCEPTANCE_LINES = []


def record(number, ok, detail):
    """Store one PASS/FAIL line; they are printed together at the end of the run."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def profile06():
    return delaunay_profile(0.6)


@pytest.fixture(scope="session")
def profile06_td():
    return delaunay_profile(0.6, tau_derivatives=True)


@pytest.fixture(scope="session")
def sweep06():
    import time

    from cmcphase.studies import end_sweep
    t0 = time.perf_counter()
    out = end_sweep(0.6, [0.1, 0.05, 0.025])
    return dict(out, seconds=time.perf_counter() - t0)


@pytest.fixture(scope="session")
def gluing06():
    from cmcphase.studies import gluing_study
    return gluing_study(0.6)
