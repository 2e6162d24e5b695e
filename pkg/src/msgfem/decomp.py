"""Overlapping decomposition with oversampling and the partition of unity."""

from dataclasses import dataclass

import numpy as np

from .grid import DIRICHLET


def split_sizes(n, m):
    """Block widths of an as-even-as-possible split of ``n`` into ``m``."""
    q, r = divmod(n, m)
    return [q + 1 if k < r else q for k in range(m)]


def _offsets(n, m):
    return np.concatenate([[0], np.cumsum(split_sizes(n, m))])


@dataclass(frozen=True)
class Box:
    """Element index box ``[i0, i1) x [j0, j1)``; nodes span ``[i0, i1] x [j0, j1]``."""

    i0: int
    i1: int
    j0: int
    j1: int

    def grow(self, k, nx, ny):
        return Box(max(self.i0 - k, 0), min(self.i1 + k, nx),
                   max(self.j0 - k, 0), min(self.j1 + k, ny))

    @property
    def shape(self):
        return self.i1 - self.i0, self.j1 - self.j0

    def contains(self, other):
        return (self.i0 <= other.i0 and other.i1 <= self.i1
                and self.j0 <= other.j0 and other.j1 <= self.j1)

    def interior_sides(self, nx, ny):
        """Which sides of the box lie inside the domain (left, right, bottom, top)."""
        return self.i0 > 0, self.i1 < nx, self.j0 > 0, self.j1 < ny


@dataclass(frozen=True)
class Subdomain:
    """One overlapping subdomain ``omega`` with its oversampling domain ``omega*``.

    Node-valued arrays are in the local numbering of ``omega*`` nodes
    (``nodes`` holds the sorted global ids).  ``b1`` are the local indices of
    interior DOFs, ``b2`` the DOFs on the interior boundary of ``omega*``,
    ``dirichlet`` the Dirichlet-tagged nodes; together they partition the
    local nodes.
    """

    id: int
    core: Box
    omega: Box
    omega_star: Box
    elements: np.ndarray
    omega_elements: np.ndarray
    nodes: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    dirichlet: np.ndarray
    chi: np.ndarray
    touches_dirichlet: bool
    H: float
    H_star: float
    clipped: bool

    @property
    def free(self):
        """``b1`` followed by ``b2``: the block ordering of the local systems."""
        return np.concatenate([self.b1, self.b2])

    def global_vector(self, local, n_nodes):
        out = np.zeros(n_nodes) if local.ndim == 1 else np.zeros((n_nodes,) + local.shape[1:])
        out[self.nodes] = local
        return out


@dataclass(frozen=True)
class Decomposition:
    m: int
    overlap: int
    ell: int
    subdomains: list
    kappa: int
    kappa_star: int
    nx: int
    ny: int

    def chi_global(self, i, n_nodes=None):
        s = self.subdomains[i]
        n = n_nodes if n_nodes is not None else (self.nx + 1) * (self.ny + 1)
        return s.global_vector(s.chi, n)

    def dump(self):
        lines = [f"# m={self.m} overlap={self.overlap} ell={self.ell} "
                 f"kappa={self.kappa} kappa_star={self.kappa_star}",
                 "id core omega omega_star |B1| |B2| touches_dirichlet"]
        for s in self.subdomains:
            def fmt(b):
                return f"[{b.i0},{b.i1})x[{b.j0},{b.j1})"
            lines.append(f"{s.id} {fmt(s.core)} {fmt(s.omega)} {fmt(s.omega_star)} "
                         f"{len(s.b1)} {len(s.b2)} {int(s.touches_dirichlet)}")
        return "\n".join(lines) + "\n"


def _ramp_weights(mesh, omega, overlap):
    """Raw weight on ``omega`` nodes: capped layer distance to its interior boundary."""
    I, J = np.meshgrid(np.arange(omega.i0, omega.i1 + 1), np.arange(omega.j0, omega.j1 + 1))
    dist = np.full(I.shape, overlap, dtype=np.int64)
    left, right, bottom, top = omega.interior_sides(mesh.nx, mesh.ny)
    if left:
        dist = np.minimum(dist, I - omega.i0)
    if right:
        dist = np.minimum(dist, omega.i1 - I)
    if bottom:
        dist = np.minimum(dist, J - omega.j0)
    if top:
        dist = np.minimum(dist, omega.j1 - J)
    return mesh.node_index(I, J).ravel(), dist.ravel() / overlap


def decompose(mesh, tags, m, overlap=2, ell=2):
    """Split the mesh into ``m x m`` blocks, overlap them and oversample.

    Blocks are ordered row-major (x fastest).  Overlap and oversampling layers
    are clipped at the domain boundary.
    """
    nx, ny = mesh.nx, mesh.ny
    if int(m) != m or m < 1:
        raise ValueError(f"m must be a positive integer, got {m!r}")
    if m > nx or m > ny:
        raise ValueError(f"m={m} exceeds the element count per axis ({nx}x{ny})")
    if overlap < 1 or ell < 0:
        raise ValueError("overlap must be >= 1 and oversampling >= 0")
    ox, oy = _offsets(nx, m), _offsets(ny, m)

    cores = [Box(int(ox[a]), int(ox[a + 1]), int(oy[b]), int(oy[b + 1]))
             for b in range(m) for a in range(m)]
    omegas = [c.grow(overlap, nx, ny) for c in cores]
    stars = [w.grow(ell, nx, ny) for w in omegas]

    # partition of unity: normalized ramps
    raw = []
    total = np.zeros(mesh.n_nodes)
    for w in omegas:
        idx, wt = _ramp_weights(mesh, w, overlap)
        raw.append((idx, wt))
        np.add.at(total, idx, wt)
    if np.any(total <= 0):
        raise AssertionError("partition of unity weights vanish at some node")

    member = np.zeros(mesh.n_elements, dtype=np.int64)
    member_star = np.zeros(mesh.n_elements, dtype=np.int64)
    node_tag = tags.node_tag
    subs = []
    for k, (core, w, st) in enumerate(zip(cores, omegas, stars)):
        els = mesh.block_elements(st.i0, st.i1, st.j0, st.j1)
        wels = mesh.block_elements(w.i0, w.i1, w.j0, w.j1)
        member[wels] += 1
        member_star[els] += 1
        nodes = mesh.block_nodes(st.i0, st.i1, st.j0, st.j1)  # already sorted
        I = nodes % (nx + 1)
        J = nodes // (nx + 1)
        left, right, bottom, top = st.interior_sides(nx, ny)
        on_ib = ((left & (I == st.i0)) | (right & (I == st.i1))
                 | (bottom & (J == st.j0)) | (top & (J == st.j1)))
        is_d = node_tag[nodes] == DIRICHLET
        b2 = np.flatnonzero(on_ib & ~is_d)
        b1 = np.flatnonzero(~on_ib & ~is_d)
        dn = np.flatnonzero(is_d)
        chi = np.zeros(len(nodes))
        idx, wt = raw[k]
        chi[np.searchsorted(nodes, idx)] = wt / total[idx]
        Hs = max(w.shape[0] * mesh.hx, w.shape[1] * mesh.hy)
        Hs_star = max(st.shape[0] * mesh.hx, st.shape[1] * mesh.hy)
        subs.append(Subdomain(k, core, w, st, els, wels, nodes, b1, b2, dn, chi,
                              bool(dn.size), Hs, Hs_star,
                              not all(st.interior_sides(nx, ny))))
    return Decomposition(int(m), int(overlap), int(ell), subs,
                         int(member.max()), int(member_star.max()), nx, ny)


def build_pou(decomp):
    """Partition of unity as a list of global nodal vectors."""
    return [decomp.chi_global(i) for i in range(len(decomp.subdomains))]


def overlap_constants(decomp):
    return decomp.kappa, decomp.kappa_star


def pou_gradient_max(mesh, chi_global):
    """Max over elements of |grad chi| for the bilinear interpolant (at corners)."""
    conn = mesh.element_nodes()
    c = chi_global[conn]
    # corner gradients of a bilinear: differences along each edge
    gx = np.abs(np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 3]], 1)) / mesh.hx
    gy = np.abs(np.stack([c[:, 3] - c[:, 0], c[:, 2] - c[:, 1]], 1)) / mesh.hy
    return float(np.sqrt(gx.max(1) ** 2 + gy.max(1) ** 2).max())
