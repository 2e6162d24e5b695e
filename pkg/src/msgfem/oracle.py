"""Dense brute-force references for the local spectral problem.

These build the discrete A-harmonic space explicitly, one harmonic extension
per interior-boundary DOF, and solve the restricted pencil densely.  They are
independent of ``local_solver``'s reduced iteration (separate sparse LU, no
multipliers) and only meant for small subdomains.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import splu

MAX_B2 = 2000


class OracleSizeError(ValueError):
    pass


@dataclass
class HarmonicBasis:
    """Columns: harmonic extensions of the unit vectors on B2 (free-DOF order).

    In the Neumann case the constant function is the sum of all columns, so
    ``constant_coords`` (all ones) expresses it in this basis.
    """

    H: np.ndarray
    n1: int
    neumann: bool

    @property
    def constant_coords(self):
        return np.ones(self.H.shape[1]) if self.neumann else None


def dense_harmonic_basis(system):
    n1, n2 = system.n1, system.n2
    if n2 > MAX_B2:
        raise OracleSizeError(f"|B2| = {n2} exceeds the desk-scale guard {MAX_B2}")
    A = system.A
    lu = splu(sp.csc_matrix(A[:n1, :n1]))
    A12 = A[:n1, n1:].toarray()
    H = np.vstack([-lu.solve(A12), np.eye(n2)])
    return HarmonicBasis(H, n1, system.neumann)


def harmonic_residual(system, phi):
    """``max |A11 phi1 + A12 phi2|`` scaled by ``max|A| * ||phi||``."""
    n1 = system.n1
    r = system.A[:n1] @ phi
    scale = abs(system.A).max() * max(np.linalg.norm(phi, axis=0).max(), 1e-300)
    return float(np.abs(r).max() / scale) if r.size else 0.0


@dataclass
class DenseSpectrum:
    eigenvalues: np.ndarray      # ascending, finite only
    vectors: np.ndarray          # free-DOF vectors (B1, B2 order)
    n_infinite: int


def dense_eigensolve(basis, A, B11, b_rtol=1e-12, k_rtol=1e-10):
    """Full finite spectrum of ``(H^T A H, H^T B H)``.

    Directions with vanishing weighted form are reported as ``n_infinite``.
    """
    H, n1 = basis.H, basis.n1
    A = sp.csr_matrix(A)
    KH = H.T @ (A @ H)
    KH = (KH + KH.T) / 2
    BH = H[:n1].T @ (B11 @ H[:n1])
    BH = (BH + BH.T) / 2
    if basis.neumann:
        c = basis.constant_coords
        Q = sla.null_space((BH @ c)[None, :])
    else:
        Q = np.eye(H.shape[1])
    Kq = Q.T @ KH @ Q
    Bq = Q.T @ BH @ Q
    kev = np.linalg.eigvalsh(Kq)
    if kev.size and kev.min() <= k_rtol * kev.max():
        raise np.linalg.LinAlgError(
            f"harmonic stiffness Gram is not positive definite (min {kev.min():.3e})")
    mu, X = sla.eigh(Bq, Kq)
    order = np.argsort(mu)[::-1]
    mu, X = mu[order], X[:, order]
    finite = mu > b_rtol * max(mu.max(), 0.0) if mu.size else np.zeros(0, bool)
    lam = 1.0 / mu[finite]
    vecs = H @ (Q @ X[:, finite])
    if basis.neumann:
        one = H @ basis.constant_coords
        lam = np.concatenate([[0.0], lam])
        vecs = np.column_stack([one, vecs])
    return DenseSpectrum(lam, vecs, int((~finite).sum()))


def best_local_error(u_local, basis, system, n):
    """``min_xi ||chi (u - psi - xi)||_{a, omega}`` over the first ``n`` basis vectors.

    ``u_local`` holds the fine solution on the ``omega*`` nodes.  Uses the
    weighted form ``system.B`` so it follows the same PoU-product convention as
    the eigenproblem.
    """
    B = system.B
    w = np.asarray(u_local) - basis.psi
    V = basis.vectors[:, :n]
    if n > 0:
        G = V.T @ (B @ V)
        r = V.T @ (B @ w)
        c = sla.lstsq((G + G.T) / 2, r, cond=1e-14)[0]
        w = w - V @ c
    return float(np.sqrt(max(w @ (B @ w), 0.0)))


def subspace_angles(X, Y, gram=None):
    """Largest principal angle between column spans (optionally in a Gram metric)."""
    if gram is not None:
        R = np.linalg.cholesky(gram).T
        X, Y = R @ X, R @ Y
    return float(np.max(sla.subspace_angles(X, Y)))
