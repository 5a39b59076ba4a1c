import time

import numpy as np
import pytest

from podocp.bench import SweepConfig, make_setup, run_sweep
from podocp.mesh import build_uniform_mesh
from podocp.ocp import OCPSetup, optimize
from podocp.sipg import DGConfig, DGSpace

ACCEPTANCE_LINES = []
FIXTURE_SECONDS = {}


PAPER_FIXTURES = {"paper_setup", "paper_solution", "paper_sweep"}


def pytest_collection_modifyitems(items):
    for item in items:
        if PAPER_FIXTURES & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][2:])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def desk_setup():
    return OCPSetup(DGSpace(build_uniform_mesh(8)), DGConfig(epsilon=1e-2), N=12)


@pytest.fixture(scope="session")
def desk_solution(desk_setup):
    y, u, p, stats = optimize(desk_setup, tol=1e-10)
    return y, u, p, stats


@pytest.fixture(scope="session")
def tiny_setup():
    return OCPSetup(DGSpace(build_uniform_mesh(3)), DGConfig(epsilon=5e-2), N=6)


@pytest.fixture(scope="session")
def desk_config():
    return SweepConfig.from_profile("desk", rank=6)


@pytest.fixture(scope="session")
def desk_sweep(desk_config):
    return run_sweep(desk_config)


@pytest.fixture(scope="session")
def paper_sweep():
    """Full-resolution sweep shared by the enrichment, baseline and speedup criteria."""
    cfg = SweepConfig.from_profile("paper", rank=9)
    start = time.perf_counter()
    result = run_sweep(cfg)
    FIXTURE_SECONDS["paper_sweep"] = time.perf_counter() - start
    return result


@pytest.fixture(scope="session")
def paper_setup():
    return make_setup(SweepConfig.from_profile("paper"))


@pytest.fixture(scope="session")
def paper_solution(paper_setup):
    start = time.perf_counter()
    solution = optimize(paper_setup)
    FIXTURE_SECONDS["paper_solution"] = time.perf_counter() - start
    return solution
