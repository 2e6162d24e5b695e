import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from msgfem import decomp, grid
from msgfem.assembly import assemble_stiffness
from msgfem.decomp import Box, build_pou, decompose, overlap_constants, split_sizes


def make(n, m, overlap=2, ell=2, sides=None, ny=None):
    mesh = grid.build_mesh(n, ny or n)
    tags = grid.classify_boundary(mesh, sides)
    return mesh, tags, decompose(mesh, tags, m, overlap, ell)


def test_block_sizes_32():
    mesh, tags, d = make(32, 2)
    assert len(d.subdomains) == 4
    for s in d.subdomains:
        assert s.core.shape == (16, 16)
        assert s.omega.shape == (18, 18)
        assert s.omega_star.shape == (20, 20)
        assert s.clipped
    s0 = d.subdomains[0]
    assert s0.core == Box(0, 16, 0, 16)
    assert s0.omega == Box(0, 18, 0, 18)
    assert s0.omega_star == Box(0, 20, 0, 20)
    # row-major: second subdomain is to the right of the first
    assert d.subdomains[1].core == Box(16, 32, 0, 16)


def test_split_500_by_8():
    w = split_sizes(500, 8)
    assert set(w) == {62, 63}
    assert sum(w) == 500
    mesh, tags, d = make(500, 8, ell=12)
    assert {s.core.shape[0] for s in d.subdomains} == {62, 63}


def test_single_subdomain():
    mesh, tags, d = make(8, 1)
    (s,) = d.subdomains
    assert s.omega == s.omega_star == Box(0, 8, 0, 8)
    assert s.b2.size == 0
    assert overlap_constants(d) == (1, 1)
    np.testing.assert_array_equal(s.chi, 1.0)


def test_kappa_m2():
    mesh, tags, d = make(32, 2)
    kappa, kappa_star = overlap_constants(d)
    assert kappa == 4
    assert kappa_star >= kappa


def test_errors():
    mesh = grid.build_mesh(4, 4)
    tags = grid.classify_boundary(mesh)
    with pytest.raises(ValueError):
        decompose(mesh, tags, 5)
    with pytest.raises(ValueError):
        decompose(mesh, tags, 0)
    with pytest.raises(ValueError):
        decompose(mesh, tags, 2, overlap=0)


def test_dof_partition_and_b2_location():
    mesh, tags, d = make(24, 3, ell=3)
    nx, ny = mesh.nx, mesh.ny
    for s in d.subdomains:
        allnodes = np.concatenate([s.b1, s.b2, s.dirichlet])
        assert len(allnodes) == len(s.nodes)
        np.testing.assert_array_equal(np.sort(allnodes), np.arange(len(s.nodes)))
        assert s.omega.contains(s.core) and s.omega_star.contains(s.omega)
        assert set(s.omega_elements) <= set(s.elements)
        g = s.nodes[s.b2]
        I, J = g % (nx + 1), g // (nx + 1)
        st_ = s.omega_star
        left, right, bottom, top = st_.interior_sides(nx, ny)
        on = (left & (I == st_.i0)) | (right & (I == st_.i1)) \
            | (bottom & (J == st_.j0)) | (top & (J == st_.j1))
        assert on.all()
        assert np.all(tags.node_tag[g] != grid.DIRICHLET)
        assert np.all(tags.node_tag[s.nodes[s.dirichlet]] == grid.DIRICHLET)
        assert s.touches_dirichlet == bool(s.dirichlet.size)


def test_every_element_covered():
    mesh, tags, d = make(20, 3)
    count = np.zeros(mesh.n_elements, int)
    for s in d.subdomains:
        count[s.omega_elements] += 1
    assert count.min() >= 1
    assert count.max() == d.kappa <= 4


def test_neumann_kernel_is_constants():
    mesh, tags, d = make(24, 3, ell=2)
    coeff = grid.builtin_coefficient("channels", mesh, contrast=1e3)
    interior = [s for s in d.subdomains if not s.touches_dirichlet]
    assert interior
    for s in interior:
        K = assemble_stiffness(mesh, coeff, s.elements, s.nodes).toarray()
        A = K[np.ix_(s.free, s.free)]
        ev = np.linalg.eigvalsh(A)
        assert abs(ev[0]) <= 1e-10 * ev[-1]
        assert ev[1] > 1e-8 * ev[-1]
        assert np.abs(A @ np.ones(len(s.free))).max() <= 1e-10 * ev[-1]


def test_pou_core_and_midpoint():
    mesh, tags, d = make(32, 2)
    chis = np.array(build_pou(d))
    # core node far from any overlap
    k = mesh.node_index(4, 4)
    np.testing.assert_array_equal(chis[:, k], [1, 0, 0, 0])
    # one layer inside the overlap band around x1-line 16 (band 14..18)
    k = mesh.node_index(16, 4)
    np.testing.assert_allclose(chis[:, k], [0.5, 0.5, 0, 0], rtol=0, atol=1e-15)
    k = mesh.node_index(16, 16)
    np.testing.assert_allclose(chis[:, k], [0.25] * 4, rtol=0, atol=1e-15)


def _check_pou(mesh, tags, d):
    chis = np.array(build_pou(d))
    assert np.all(chis >= 0) and np.all(chis <= 1)
    np.testing.assert_allclose(chis.sum(0), 1.0, rtol=0, atol=2 * np.finfo(float).eps)
    nx, ny = mesh.nx, mesh.ny
    h = min(mesh.hx, mesh.hy)
    for s, chi in zip(d.subdomains, chis):
        w = s.omega
        outside = np.ones(mesh.n_nodes, bool)
        outside[mesh.block_nodes(w.i0, w.i1, w.j0, w.j1)] = False
        assert np.all(chi[outside] == 0)
        I, J = np.arange(mesh.n_nodes) % (nx + 1), np.arange(mesh.n_nodes) // (nx + 1)
        left, right, bottom, top = w.interior_sides(nx, ny)
        edge = ((left & (I == w.i0)) | (right & (I == w.i1))
                | (bottom & (J == w.j0)) | (top & (J == w.j1)))
        assert np.all(chi[edge] == 0)
        # support stays in B1 or Dirichlet nodes of omega*
        if d.ell >= 1:
            pos = np.flatnonzero(s.chi > 0)
            assert set(pos) <= set(s.b1) | set(s.dirichlet)
        assert decomp.pou_gradient_max(mesh, chi) <= 2.0 / (d.overlap * h) * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(nx=st.integers(4, 30), ny=st.integers(4, 30), m=st.integers(1, 4),
       overlap=st.integers(1, 3), ell=st.integers(0, 4))
def test_pou_properties(nx, ny, m, overlap, ell):
    m = min(m, nx, ny)
    mesh = grid.build_mesh(nx, ny)
    tags = grid.classify_boundary(mesh)
    d = decompose(mesh, tags, m, overlap, ell)
    _check_pou(mesh, tags, d)
    assert d.kappa_star >= d.kappa
    assert d.kappa <= 4 or overlap > min(nx, ny) // (2 * m)


def test_deterministic():
    a = make(30, 3, ell=4)[2]
    b = make(30, 3, ell=4)[2]
    assert a.dump() == b.dump()
    for s, t in zip(a.subdomains, b.subdomains):
        np.testing.assert_array_equal(s.chi, t.chi)
        np.testing.assert_array_equal(s.b2, t.b2)


def test_dump_lists_every_subdomain():
    d = make(16, 2)[2]
    text = d.dump()
    assert "kappa=4" in text
    assert len(text.strip().splitlines()) == 2 + 4
