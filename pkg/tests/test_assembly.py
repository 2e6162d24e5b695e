import numpy as np
import pytest
import scipy.sparse as sp
import sympy as sy
from hypothesis import given, settings
from hypothesis import strategies as st

from msgfem import assembly, grid
from msgfem.assembly import NumericalBreakdown


def _sympy_element(hx, hy, a=1, chi=None):
    """Stiffness/mass/weighted stiffness of one rectangle by symbolic integration."""
    x, y = sy.symbols("x y")
    X = [0, hx, hx, 0]
    Y = [0, 0, hy, hy]
    N = [(1 - x / hx if X[k] == 0 else x / hx) * (1 - y / hy if Y[k] == 0 else y / hy)
         for k in range(4)]
    if chi is not None:
        w = sum(c * n for c, n in zip(chi, N))
        N = [w * n for n in N]
    K = sy.zeros(4, 4)
    M = sy.zeros(4, 4)
    for i in range(4):
        for j in range(4):
            g = sy.diff(N[i], x) * sy.diff(N[j], x) + sy.diff(N[i], y) * sy.diff(N[j], y)
            K[i, j] = a * sy.integrate(sy.integrate(g, (x, 0, hx)), (y, 0, hy))
            M[i, j] = sy.integrate(sy.integrate(N[i] * N[j], (x, 0, hx)), (y, 0, hy))
    return np.array(K.tolist(), dtype=float), np.array(M.tolist(), dtype=float)


def test_element_stiffness_unit_square():
    ref = np.array([[4, -1, -2, -1], [-1, 4, -1, -2], [-2, -1, 4, -1], [-1, -2, -1, 4]]) / 6
    np.testing.assert_allclose(assembly.element_stiffness(1.0, 1.0, 1.0), ref, atol=1e-15)


@pytest.mark.parametrize("hx,hy", [(1, 1), (sy.Rational(1, 2), sy.Rational(1, 5)), (3, sy.Rational(2, 7))])
def test_element_matrices_match_symbolic_integration(hx, hy):
    K, M = _sympy_element(hx, hy, a=sy.Rational(7, 3))
    np.testing.assert_allclose(assembly.element_stiffness(7 / 3, float(hx), float(hy)), K,
                               rtol=1e-14, atol=1e-14)
    np.testing.assert_allclose(assembly.element_mass(float(hx), float(hy)), M, rtol=1e-14)


def test_element_matrix_properties():
    K = assembly.element_stiffness(3.5, 0.2, 0.7)
    np.testing.assert_allclose(K, 3.5 * assembly.element_stiffness(1.0, 0.2, 0.7))
    np.testing.assert_allclose(K.sum(axis=1), 0, atol=1e-14)
    M = assembly.element_mass(0.3, 0.4)
    assert M.sum() == pytest.approx(0.12)
    np.testing.assert_allclose(assembly.element_mass(0.6, 0.4), 2 * M)
    ref = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36
    np.testing.assert_allclose(assembly.element_mass(1, 1), ref)


def test_weighted_stiffness_exact_quadrature_matches_symbolic():
    chi = [sy.Rational(1, 3), 1, sy.Rational(1, 2), 0]
    Kw, _ = _sympy_element(sy.Rational(1, 4), sy.Rational(1, 3), a=2, chi=chi)
    mesh = grid.build_mesh(1, 1, (0, 0.25, 0, 1 / 3))
    coeff = grid.CoefficientField(np.array([2.0]), 1, 1)
    conn = mesh.element_nodes([0])[0]           # element order -> global node ids
    chi_nodes = np.zeros(4)
    chi_nodes[conn] = [float(c) for c in chi]
    B = assembly.assemble_weighted_stiffness(mesh, coeff, chi_nodes, [0], np.arange(4)).toarray()
    np.testing.assert_allclose(B[np.ix_(conn, conn)], Kw, rtol=1e-12, atol=1e-13)


def test_weighted_stiffness_with_unit_chi_is_stiffness():
    mesh = grid.build_mesh(5, 4)
    coeff = grid.builtin_coefficient("inclusions", mesh, count=5, radius=0.2)
    K = assembly.assemble_stiffness(mesh, coeff)
    B = assembly.assemble_weighted_stiffness(mesh, coeff, np.ones(mesh.n_nodes),
                                             None, np.arange(mesh.n_nodes))
    assert abs(K - B).max() < 1e-13 * abs(K).max()


def test_global_stiffness_kernel_and_linear_energy():
    mesh = grid.build_mesh(2, 2)
    K = assembly.assemble_stiffness(mesh, None)
    np.testing.assert_allclose(K @ np.ones(9), 0, atol=1e-14)
    assert abs(K - K.T).max() == 0
    mesh = grid.build_mesh(4, 4)
    K = assembly.assemble_stiffness(mesh, None)
    x1 = mesh.node_coords()[:, 0]
    assert x1 @ (K @ x1) == pytest.approx(1.0, rel=1e-14)
    assert assembly.energy_norm(K, x1) == pytest.approx(1.0, rel=1e-14)


def test_single_element_assembly_scatters_element_matrix():
    mesh = grid.build_mesh(3, 3)
    coeff = grid.builtin_coefficient("constant", mesh, value=2.0)
    K = assembly.assemble_stiffness(mesh, coeff, [4]).toarray()
    conn = mesh.element_nodes([4])[0]
    np.testing.assert_allclose(K[np.ix_(conn, conn)], assembly.element_stiffness(2.0, 1 / 3, 1 / 3))
    assert np.count_nonzero(K) == 16
    # local numbering
    Kl = assembly.assemble_stiffness(mesh, coeff, [4], np.sort(conn)).toarray()
    assert Kl.shape == (4, 4)
    with pytest.raises(ValueError):
        assembly.assemble_stiffness(mesh, coeff, [])


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31 - 1))
def test_assembly_additive_over_disjoint_regions(nx, ny, seed):
    mesh = grid.build_mesh(nx, ny)
    rng = np.random.default_rng(seed)
    coeff = grid.CoefficientField(rng.uniform(0.1, 10, nx * ny), nx, ny)
    mask = rng.random(nx * ny) < 0.5
    r1, r2 = np.flatnonzero(mask), np.flatnonzero(~mask)
    K = assembly.assemble_stiffness(mesh, coeff)
    parts = [assembly.assemble_stiffness(mesh, coeff, r) for r in (r1, r2) if r.size]
    assert abs(K - sum(parts)).max() <= 1e-13 * abs(K).max()
    # quadratic form equals the element sum
    v = rng.standard_normal(mesh.n_nodes)
    conn = mesh.element_nodes()
    Ke = assembly.element_stiffness(1.0, mesh.hx, mesh.hy)
    terms = coeff.values * np.einsum("ea,ab,eb->e", v[conn], Ke, v[conn])
    assert abs(v @ (K @ v) - terms.sum()) <= 1e-12 * np.abs(terms).sum()


def test_load_examples():
    mesh = grid.build_mesh(1, 1)
    tags = grid.classify_boundary(mesh, {s: "D" for s in grid.SIDES})
    F = assembly.assemble_load(mesh, grid.constant_problem(1.0, 0.0), tags)
    np.testing.assert_allclose(F, 0.25)
    mesh = grid.build_mesh(4, 4)
    tags = grid.classify_boundary(mesh)
    F = assembly.assemble_load(mesh, grid.constant_problem(0.0, 1.0), tags, elements=[1])
    # element 1 touches the bottom (Neumann) edge between nodes 1 and 2
    np.testing.assert_allclose(F[[1, 2]], 0.125)
    assert np.count_nonzero(F) == 2
    # regions that do not own the edge do not see it
    F2 = assembly.assemble_load(mesh, grid.constant_problem(0.0, 1.0), tags, elements=[5])
    assert not F2.any()
    # total Neumann flux = total Neumann length (top and bottom)
    Ft = assembly.assemble_load(mesh, grid.constant_problem(0.0, 1.0), tags)
    assert Ft.sum() == pytest.approx(2.0)


def test_load_quadrature_refinement():
    mesh = grid.build_mesh(16, 16)
    tags = grid.classify_boundary(mesh)
    data = grid.ProblemData(grid.eval_source, lambda x, y: 0 * x, lambda x, y: 0 * x)
    F3 = assembly.assemble_load(mesh, data, tags, order=3)
    F5 = assembly.assemble_load(mesh, data, tags, order=5)
    # entries in the far tail of the Gaussian carry relative quadrature error
    # of a few 1e-6; judge entries against the load scale
    big = np.abs(F5) > 1e-3 * np.abs(F5).max()
    np.testing.assert_allclose(F3[big], F5[big], rtol=1e-6)
    assert np.linalg.norm(F3 - F5) <= 1e-6 * np.linalg.norm(F5)
    assert np.abs(F3 - F5).max() <= 1e-6 * np.abs(F5).max()


def test_pou_scale():
    rng = np.random.default_rng(0)
    v, chi, w = rng.standard_normal((3, 10))
    np.testing.assert_array_equal(assembly.pou_scale(v, np.ones(10)), v)
    np.testing.assert_array_equal(assembly.pou_scale(np.ones(10), chi), chi)
    chi[:4] = 0
    assert not assembly.pou_scale(v, chi)[:4].any()
    np.testing.assert_allclose(assembly.pou_scale(2 * v + w, chi),
                               2 * assembly.pou_scale(v, chi) + assembly.pou_scale(w, chi))
    np.testing.assert_allclose(assembly.pou_scale(v, 3 * chi), 3 * assembly.pou_scale(v, chi))
    assert assembly.pou_scale(np.ones((10, 2)), chi).shape == (10, 2)
    with pytest.raises(ValueError):
        assembly.pou_scale(v, chi[:5])


def test_norms():
    mesh = grid.build_mesh(6, 6)
    K = assembly.assemble_stiffness(mesh, None)
    M = assembly.assemble_mass(mesh)
    assert assembly.energy_norm(K, np.zeros(mesh.n_nodes)) == 0
    assert assembly.energy_norm(K, np.full(mesh.n_nodes, 3.0)) <= 1e-12 * 3
    x1 = mesh.node_coords()[:, 0]
    # |x1|_H1^2 = 1 + 1/3
    assert assembly.h1_norm(K, M, x1) == pytest.approx(np.sqrt(4 / 3), rel=1e-14)
    with pytest.raises(NumericalBreakdown):
        assembly.energy_norm(-K - sp.eye(mesh.n_nodes), np.ones(mesh.n_nodes))
