"""Q1 element matrices, sparse assembly, load vectors and norms."""

import numpy as np
import scipy.sparse as sp

from .grid import NEUMANN

# reference node coordinates, counterclockwise from (0, 0)
_XI = np.array([0.0, 1.0, 1.0, 0.0])
_ETA = np.array([0.0, 0.0, 1.0, 1.0])

_KX = np.array([[2, -2, -1, 1], [-2, 2, 1, -1], [-1, 1, 2, -2], [1, -1, -2, 2]]) / 6.0
_KY = np.array([[2, 1, -1, -2], [1, 2, -2, -1], [-1, -2, 2, 1], [-2, -1, 1, 2]]) / 6.0
_M = np.array([[4, 2, 1, 2], [2, 4, 2, 1], [1, 2, 4, 2], [2, 1, 2, 4]]) / 36.0


class NumericalBreakdown(ArithmeticError):
    pass


def gauss_1d(order):
    """Gauss-Legendre points and weights on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _shape(xi, eta):
    """Shape values (nq, 4) and reference gradients (nq, 4, 2)."""
    xi = np.asarray(xi)[:, None]
    eta = np.asarray(eta)[:, None]
    sx = np.where(_XI == 1.0, xi, 1.0 - xi)
    sy = np.where(_ETA == 1.0, eta, 1.0 - eta)
    dsx = np.where(_XI == 1.0, 1.0, -1.0)
    dsy = np.where(_ETA == 1.0, 1.0, -1.0)
    N = sx * sy
    dN = np.stack([dsx * sy, sx * dsy], axis=-1)
    return N, dN


def _tensor_rule(order):
    x, w = gauss_1d(order)
    XI, ETA = np.meshgrid(x, x)
    W = np.outer(w, w)
    return XI.ravel(), ETA.ravel(), W.ravel()


def element_stiffness(a, hx, hy):
    """Exact stiffness of ``a * grad u . grad v`` on an ``hx`` x ``hy`` rectangle."""
    return a * (hy / hx * _KX + hx / hy * _KY)


def element_mass(hx, hy):
    return hx * hy * _M


def _scatter(mesh, elements, nodes, local_mats):
    conn = mesh.element_nodes(elements)
    if nodes is None:
        idx, n = conn, mesh.n_nodes
    else:
        idx, n = np.searchsorted(nodes, conn), len(nodes)
    rows = np.repeat(idx, 4, axis=1).ravel()
    cols = np.tile(idx, (1, 4)).ravel()
    return sp.csr_matrix((local_mats.reshape(-1), (rows, cols)), shape=(n, n))


def _elements_arg(mesh, elements):
    if elements is None:
        return np.arange(mesh.n_elements)
    elements = np.asarray(elements, dtype=np.int64)
    if elements.size == 0:
        raise ValueError("empty element region")
    return elements


def assemble_stiffness(mesh, coeff, elements=None, nodes=None):
    """Stiffness over a set of elements.

    With ``nodes`` (sorted global node ids covering the region) the result uses
    local numbering ``k -> nodes[k]``; otherwise global numbering.
    """
    elements = _elements_arg(mesh, elements)
    a = 1.0 if coeff is None else coeff.values[elements]
    Kref = element_stiffness(1.0, mesh.hx, mesh.hy)
    mats = np.multiply.outer(np.broadcast_to(a, elements.shape), Kref)
    return _scatter(mesh, elements, nodes, mats)


def assemble_mass(mesh, elements=None, nodes=None):
    elements = _elements_arg(mesh, elements)
    mats = np.broadcast_to(element_mass(mesh.hx, mesh.hy), (elements.size, 4, 4))
    return _scatter(mesh, elements, nodes, np.ascontiguousarray(mats))


def assemble_weighted_stiffness(mesh, coeff, chi, elements, nodes, order=3):
    """Matrix of ``a(chi u, chi v)`` with ``chi`` bilinear per element.

    ``chi`` holds nodal values in the ``nodes`` numbering. Gauss order 3
    integrates these biquadratic products exactly.
    """
    elements = _elements_arg(mesh, elements)
    conn = np.searchsorted(nodes, mesh.element_nodes(elements))
    chi_e = np.asarray(chi)[conn]                       # (ne, 4)
    xi, eta, w = _tensor_rule(order)
    N, dN = _shape(xi, eta)                             # (q,4), (q,4,2)
    scale = np.array([1.0 / mesh.hx, 1.0 / mesh.hy])
    G = dN * scale                                      # physical gradients
    chi_q = chi_e @ N.T                                 # (ne, q)
    dchi_q = np.einsum("ea,qad->eqd", chi_e, G)         # (ne, q, 2)
    # grad(chi N_a) at each point
    grad = chi_q[:, :, None, None] * G[None] + N[None, :, :, None] * dchi_q[:, :, None, :]
    a = coeff.values[elements]
    mats = np.einsum("q,eqad,eqbd->eab", w, grad, grad) * (mesh.hx * mesh.hy) * a[:, None, None]
    return _scatter(mesh, elements, nodes, mats)


def assemble_load(mesh, data, tags, elements=None, nodes=None, order=3):
    """``F(v) = int f v + int_{Neumann} g v`` restricted to a region.

    Neumann edges contribute only when their element lies in the region.
    """
    elements = _elements_arg(mesh, elements)
    n = mesh.n_nodes if nodes is None else len(nodes)
    F = np.zeros(n)
    conn = mesh.element_nodes(elements)
    idx = conn if nodes is None else np.searchsorted(nodes, conn)

    xi, eta, w = _tensor_rule(order)
    N, _ = _shape(xi, eta)
    x0, _, y0, _ = mesh.rect
    ei, ej = elements % mesh.nx, elements // mesh.nx
    X = x0 + (ei[:, None] + xi[None, :]) * mesh.hx
    Y = y0 + (ej[:, None] + eta[None, :]) * mesh.hy
    fq = np.broadcast_to(data.f(X, Y), X.shape)
    Fe = (fq * w) @ N * (mesh.hx * mesh.hy)
    np.add.at(F, idx, Fe)

    edges = tags.edges[tags.edges[:, 3] == NEUMANN]
    edges = edges[np.isin(edges[:, 2], elements)]
    if len(edges):
        t, wt = gauss_1d(order)
        coords = mesh.node_coords()
        pa, pb = coords[edges[:, 0]], coords[edges[:, 1]]
        length = np.linalg.norm(pb - pa, axis=1)
        P = pa[:, None, :] + t[None, :, None] * (pb - pa)[:, None, :]
        gq = np.broadcast_to(data.g(P[..., 0], P[..., 1]), P.shape[:2])
        ga = (gq * wt * (1.0 - t)).sum(1) * length
        gb = (gq * wt * t).sum(1) * length
        ia, ib = edges[:, 0], edges[:, 1]
        if nodes is not None:
            ia, ib = np.searchsorted(nodes, ia), np.searchsorted(nodes, ib)
        np.add.at(F, ia, ga)
        np.add.at(F, ib, gb)
    return F


def pou_scale(vec, chi):
    """Nodal interpolant of ``chi * vec``."""
    vec = np.asarray(vec)
    chi = np.asarray(chi)
    if vec.shape[0] != chi.shape[0]:
        raise ValueError(f"length mismatch {vec.shape[0]} != {chi.shape[0]}")
    return chi * vec if vec.ndim == 1 else chi[:, None] * vec


def quadratic_form(K, v):
    v = np.asarray(v, dtype=float)
    q = float(v @ (K @ v))
    scale = float(v @ v) * (abs(K).max() if K.nnz else 0.0)
    if q < -1e-12 * scale:
        raise NumericalBreakdown(f"negative quadratic form {q:.3e}")
    return max(q, 0.0)


def energy_norm(K, v):
    return float(np.sqrt(quadratic_form(K, v)))


def h1_norm(K_unit, M, v):
    return float(np.sqrt(quadratic_form(K_unit, v) + quadratic_form(M, v)))
