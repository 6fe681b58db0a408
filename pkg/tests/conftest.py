import numpy as np
import pytest

from gradrom.mesh import build_uniform_mesh
from gradrom.sipg import DGSpace, assemble_operators


def small_ops(n=3, length=8.0, q=1):
    return assemble_operators(DGSpace(build_uniform_mesh((0.0, length), n, n), q))


@pytest.fixture(scope="session")
def ops_p1():
    return small_ops(3, 8.0, 1)


@pytest.fixture(scope="session")
def ops_p2():
    return small_ops(3, 8.0, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, title, detail); filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {n:>2}. {title}: {detail}")
