import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from msgfem import factor, grid
from msgfem.assembly import assemble_stiffness
from msgfem.factor import KERNELS, BandLDL, FactorizationError

BACKENDS = sorted(KERNELS)


def laplacian_2d(n):
    T = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    I = sp.identity(n)
    return sp.csr_matrix(sp.kron(I, T) + sp.kron(T, I))


def interior_stiffness(n, coef="inclusions"):
    mesh = grid.build_mesh(n, n)
    K = assemble_stiffness(mesh, grid.builtin_coefficient(coef, mesh, seed=3)).tocsr()
    I, J = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    idx = np.flatnonzero(((I > 0) & (I < n) & (J > 0) & (J < n)).ravel())
    return K[idx][:, idx]


def test_backend_is_named():
    assert factor.BACKEND in ("cython", "python")
    assert "python" in KERNELS


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("ordering", ["rcm", "natural"])
def test_reconstruction_and_solve(backend, ordering, rng):
    A = interior_stiffness(14)
    F = BandLDL(A, ordering=ordering, backend=backend)
    err = abs(F.reconstruct() - A).max()
    assert err <= 1e-10 * abs(A).max()
    assert np.all(F.D > 0)
    b = rng.standard_normal((A.shape[0], 3))
    x = F.solve(b)
    assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b) * 1e4
    x1 = F.solve(b[:, 0])
    assert x1.shape == (A.shape[0],)
    np.testing.assert_allclose(x1, x[:, 0], rtol=1e-12, atol=0)


def test_rcm_reduces_bandwidth(rng):
    A = laplacian_2d(12)
    p = rng.permutation(A.shape[0])
    Ap = A[p][:, p]
    assert BandLDL(Ap).bw < factor.bandwidth(Ap)
    assert BandLDL(Ap).bw <= 13


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    A = interior_stiffness(12)
    b = rng.standard_normal(A.shape[0])
    Fc, Fp = BandLDL(A, backend="cython"), BandLDL(A, backend="python")
    np.testing.assert_allclose(Fc.D, Fp.D, rtol=1e-13)
    np.testing.assert_allclose(Fc.solve(b), Fp.solve(b), rtol=1e-10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_indefinite_and_singular_raise(backend):
    with pytest.raises(FactorizationError):
        BandLDL(sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 1.0]])), backend=backend)
    # Neumann Laplacian: constants in the kernel
    mesh = grid.build_mesh(4, 4)
    K = assemble_stiffness(mesh, None)
    with pytest.raises(FactorizationError):
        BandLDL(K, backend=backend)


def test_bad_arguments():
    with pytest.raises(ValueError):
        BandLDL(sp.csr_matrix(np.ones((2, 3))))
    with pytest.raises(ValueError):
        BandLDL(sp.identity(3), ordering="amd")


def test_empty_matrix():
    F = BandLDL(sp.csr_matrix((0, 0)))
    assert F.solve(np.zeros(0)).shape == (0,)


@st.composite
def spd_matrices(draw):
    n = draw(st.integers(1, 25))
    seed = draw(st.integers(0, 2**31 - 1))
    density = draw(st.floats(0.05, 0.5))
    r = np.random.default_rng(seed)
    R = sp.random(n, n, density=density, random_state=r)
    A = R + R.T
    # strict diagonal dominance with positive diagonal
    d = abs(A).sum(axis=1).A.ravel() + r.uniform(0.1, 2.0, n)
    return sp.csr_matrix(A + sp.diags(d)), seed


@settings(max_examples=60, deadline=None)
@given(spd_matrices())
def test_random_spd(case):
    A, seed = case
    b = np.random.default_rng(seed).standard_normal(A.shape[0])
    for backend in BACKENDS:
        F = BandLDL(A, backend=backend)
        assert abs(F.reconstruct() - A).max() <= 1e-10 * abs(A).max()
        x = F.solve(b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)
