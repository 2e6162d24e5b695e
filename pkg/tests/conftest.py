import numpy as np
import pytest

from msgfem import decomp, grid
from msgfem import local_solver as ls


class Setup:
    """Mesh, tags, coefficient, data and decomposition for one small problem."""

    def __init__(self, n=24, m=2, overlap=2, ell=2, coef="constant", data=None, **cp):
        self.mesh = grid.build_mesh(n, n)
        self.tags = grid.classify_boundary(self.mesh)
        self.coeff = grid.builtin_coefficient(coef, self.mesh, **cp)
        self.data = data if data is not None else grid.benchmark_problem()
        self.decomp = decomp.decompose(self.mesh, self.tags, m, overlap, ell)

    def system(self, i, pou_mode="nodal"):
        s = self.decomp.subdomains[i]
        return ls.local_system(self.mesh, self.coeff, self.tags, self.data, s, pou_mode)


@pytest.fixture(scope="session")
def small_dirichlet():
    """24x24, m=2: every oversampling domain touches the Dirichlet sides."""
    return Setup(24, 2, 2, 2)


@pytest.fixture(scope="session")
def small_mixed():
    """32x32, m=4, channels: corner, Neumann-edge and interior subdomains."""
    return Setup(32, 4, 2, 4, "channels", contrast=1e3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one line per criterion in the terminal summary

CRITERIA = []


def record_criterion(num, title, ok, detail):
    CRITERIA.append((num, title, ok, detail))
    print(f"criterion {num} {'PASS' if ok else 'FAIL'}: {title}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  [{num}] {title}: {detail}")
