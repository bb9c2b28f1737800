import numpy as np
import pytest

from ncrb.experiments import Pipeline, default_config
from ncrb.fem import DesignSet, assemble_affine
from ncrb.geometry import FinShape, build_fin_mesh


@pytest.fixture(scope="session")
def mesh1():
    return build_fin_mesh(FinShape(n_fins=1, refinement=1))


@pytest.fixture(scope="session")
def op1(mesh1):
    return assemble_affine(mesh1)


@pytest.fixture(scope="session")
def op4():
    """4 fins at the coarsest grid: small but with every parameter active."""
    return assemble_affine(build_fin_mesh(FinShape(n_fins=4, refinement=1)))


@pytest.fixture(scope="session")
def design4():
    return DesignSet.default(4, 5)


@pytest.fixture(scope="session")
def desk_p1():
    """Desk-scale P=1 pipeline (4 fins, refinement 4, M=200, eps=1e-6)."""
    return Pipeline(default_config("table1"))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# acceptance criteria register their outcome here; printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def acceptance():
    """Record ``(criterion, ok, detail)`` and print it immediately."""

    def record(k, ok, detail):
        ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        return bool(ok)

    return record
