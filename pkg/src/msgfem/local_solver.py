"""Local particular functions and the constrained local eigensolver.

For one oversampling domain the DOFs are ordered ``B1`` (interior) then
``B2`` (interior boundary); ``A`` is the stiffness on those DOFs with the
blocks ``A11, A12, A21, A22``, and ``B`` is the matrix of
``a_omega(chi u, chi v)`` (nonzero only on ``B1``).

The eigenproblem ``a(phi, v) = lam * a_omega(chi phi, chi v)`` on discrete
A-harmonic functions is solved through the multiplier ``p``:
``A11 p = lam * B11 phi1`` with ``phi`` obtained from ``p`` by one solve with
``A`` (or, when the oversampling domain has no Dirichlet boundary, with ``A``
bordered by the constraint ``a_omega(chi phi, chi) = 0``).  No harmonic
extension basis is ever formed.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .assembly import assemble_load, assemble_stiffness, assemble_weighted_stiffness
from .factor import BandLDL, FactorizationError


class LocalSolveError(RuntimeError):
    """A local factorization or solve failed; carries the subdomain id."""

    def __init__(self, sub_id, msg):
        super().__init__(f"subdomain {sub_id}: {msg}")
        self.sub_id = sub_id


class EigenSolverError(LocalSolveError):
    def __init__(self, sub_id, msg, residuals):
        super().__init__(sub_id, msg)
        self.residuals = residuals


@dataclass
class LocalSystem:
    """Assembled local matrices of one oversampling domain (``omega*`` numbering)."""

    sub: object
    K: sp.csr_matrix            # stiffness over omega*, all local nodes
    F: np.ndarray               # load over omega*
    B: sp.csr_matrix            # a_omega(chi ., chi .), all local nodes
    q: np.ndarray               # Dirichlet data at sub.dirichlet
    A: sp.csr_matrix = field(init=False)
    n1: int = field(init=False)
    n2: int = field(init=False)

    def __post_init__(self):
        free = self.sub.free
        self.A = sp.csr_matrix(self.K[free][:, free])
        self.n1 = len(self.sub.b1)
        self.n2 = len(self.sub.b2)

    @cached_property
    def A11(self):
        return sp.csr_matrix(self.A[:self.n1, :self.n1])

    @cached_property
    def A21(self):
        return sp.csr_matrix(self.A[self.n1:, :self.n1])

    @cached_property
    def B11(self):
        b1 = self.sub.b1
        return sp.csr_matrix(self.B[b1][:, b1])

    @property
    def neumann(self):
        return not self.sub.touches_dirichlet

    def to_local(self, free_vals):
        """Free-DOF values (B1, B2 order) -> full local node vector(s), zero on Dirichlet."""
        shape = (len(self.sub.nodes),) + np.shape(free_vals)[1:]
        out = np.zeros(shape)
        out[self.sub.free] = free_vals
        return out


def local_system(mesh, coeff, tags, data, sub, pou_mode="nodal"):
    """Assemble stiffness, load and the PoU-weighted form on ``omega*``.

    ``pou_mode="nodal"`` represents ``chi v`` by its nodal interpolant, so the
    weighted form is ``diag(chi) K diag(chi)``; ``"exact"`` integrates the
    products of bilinears with Gauss quadrature.
    """
    K = assemble_stiffness(mesh, coeff, sub.elements, sub.nodes)
    F = assemble_load(mesh, data, tags, sub.elements, sub.nodes) if data is not None \
        else np.zeros(len(sub.nodes))
    if pou_mode == "nodal":
        D = sp.diags(sub.chi)
        B = sp.csr_matrix(D @ K @ D)
    elif pou_mode == "exact":
        B = assemble_weighted_stiffness(mesh, coeff, sub.chi, sub.elements, sub.nodes)
    else:
        raise ValueError(f"unknown PoU-product mode {pou_mode!r}")
    if data is not None and sub.dirichlet.size:
        xy = mesh.node_coords()[sub.nodes[sub.dirichlet]]
        q = np.broadcast_to(data.q(xy[:, 0], xy[:, 1]), (len(xy),)).astype(float)
    else:
        q = np.zeros(len(sub.dirichlet))
    return LocalSystem(sub, K, F, B, q)


class LocalFactorization:
    """Factorizations needed by the local solves.

    ``A11`` is always factored.  With Dirichlet contact ``A`` itself is
    positive definite and factored directly.  Otherwise ``A`` is singular
    (constants) and the bordered system

        [A   M] [phi]   [r]
        [M^T 0] [ c ] = [0],      M = B 1,

    is solved by factoring ``A + gamma e_j e_j^T`` (positive definite) and
    eliminating the two scalars ``e_j^T phi`` and ``c``.
    """

    def __init__(self, system):
        self.system = system
        sid = system.sub.id
        self.n1, self.n2 = system.n1, system.n2
        if self.n1 == 0:
            raise LocalSolveError(sid, "oversampling domain has no interior DOFs")
        case = "Neumann" if system.neumann else "Dirichlet"
        try:
            self.A11 = BandLDL(system.A11)
            if not system.neumann:
                self.A = BandLDL(system.A)
                self.M = None
            else:
                ones = np.ones(len(system.sub.nodes))
                self.M = (system.B @ ones)[system.sub.free]
                if not np.any(self.M):
                    raise LocalSolveError(sid, "constraint vector a(chi phi, chi) vanishes")
                self.pin = 0
                self.gamma = system.A[0, 0]
                nf = self.n1 + self.n2
                e = np.zeros(nf)
                e[self.pin] = 1.0
                pin = sp.csr_matrix(([self.gamma], ([self.pin], [self.pin])), shape=(nf, nf))
                self.A = BandLDL(system.A + pin)
                self._y_e = self.A.solve(e)
                self._y_M = self.A.solve(self.M)
                # boundary-row direction that keeps harmonic iterates on the
                # constraint: m2 = -A21 A11^{-1} M1, with 1^T m2 = 1^T M1
                self.m2 = -(system.A21 @ self.A11.solve(self.M[:self.n1]))
                self._a11_one = system.A11 @ np.ones(self.n1)
                self._m_one = float(self.M[:self.n1].sum())
        except FactorizationError as exc:
            raise LocalSolveError(sid, f"{case} factorization failed: {exc}") from None

    @property
    def neumann(self):
        return self.M is not None

    def solve(self, rhs):
        """Solve with ``A`` (Dirichlet) or the bordered ``A`` (Neumann).

        Returns ``phi`` and, in the Neumann case, also the multiplier ``c``.
        """
        rhs = np.asarray(rhs, dtype=float)
        y = self.A.solve(rhs)
        if not self.neumann:
            return y
        vec = y.ndim == 1
        Y = y.reshape(len(y), -1)
        j, g = self.pin, self.gamma
        ye, yM, M = self._y_e, self._y_M, self.M
        S = np.array([[g * ye[j] - 1.0, -yM[j]],
                      [g * (M @ ye), -(M @ yM)]])
        rhs2 = -np.vstack([Y[j], M @ Y])
        t, c = np.linalg.solve(S, rhs2)
        phi = Y + g * np.outer(ye, t) - np.outer(yM, c)
        return (phi[:, 0], c[0]) if vec else (phi, c)

    def solve_phi(self, rhs):
        out = self.solve(rhs)
        return out[0] if self.neumann else out


def factorize_local(system):
    return LocalFactorization(system)


def apply_reduced_operator(fact, p):
    """Map multipliers ``p`` (on B1) to the A-harmonic ``phi`` with ``A phi = (0, -A21 p)``.

    Without Dirichlet contact that system is solvable only when
    ``1^T A21 p = 0`` (true at eigenpairs).  For general ``p`` the boundary
    rows get the rank-one correction ``s * m2`` that makes the right-hand side
    consistent, so ``phi`` stays A-harmonic and satisfies the constraint; it
    is the harmonic function representing ``v -> a_omega(chi p', chi v)`` on
    the constrained space.
    """
    p = np.asarray(p, dtype=float)
    vec = p.ndim == 1
    P = p.reshape(fact.n1, -1)
    rhs = np.zeros((fact.n1 + fact.n2, P.shape[1]))
    rhs[fact.n1:] = -(fact.system.A21 @ P)
    if fact.neumann:
        s = -(fact._a11_one @ P) / fact._m_one
        rhs[fact.n1:] += np.outer(fact.m2, s)
    phi = fact.solve_phi(rhs)
    phi1, phi2 = phi[:fact.n1], phi[fact.n1:]
    return (phi1[:, 0], phi2[:, 0]) if vec else (phi1, phi2)


def solve_particular_r(system, fact):
    """Zero on B2 and Dirichlet nodes; ``A11 psi1 = F1``."""
    psi1 = fact.A11.solve(system.F[system.sub.b1])
    out = np.zeros(len(system.sub.nodes))
    out[system.sub.b1] = psi1
    return out


def solve_particular_d(system, fact):
    """Equals ``q`` on Dirichlet nodes, A-harmonic against all of B1 and B2."""
    sub = system.sub
    out = np.zeros(len(sub.nodes))
    if not sub.touches_dirichlet:
        return out
    Kfd = system.K[sub.free][:, sub.dirichlet]
    out[sub.free] = fact.solve_phi(-(Kfd @ system.q))
    out[sub.dirichlet] = system.q
    return out


@dataclass
class LocalSpectralBasis:
    """Eigenpairs of one subdomain plus its particular function.

    ``eigenvalues`` has ``n_loc + 1`` entries (the last one is only the error
    certificate; ``inf`` when the local space is exhausted).  ``vectors`` holds
    the first ``n_loc`` eigenvectors as local node vectors on ``omega*``.  In
    the Neumann case the first vector is the constant with eigenvalue 0.
    """

    sub_id: int
    eigenvalues: np.ndarray
    vectors: np.ndarray
    psi_r: np.ndarray
    psi_d: np.ndarray
    includes_constant: bool
    multipliers: np.ndarray = None
    residuals: np.ndarray = None
    iterations: int = 0
    dimension: int = 0

    @property
    def psi(self):
        return self.psi_r + self.psi_d

    @property
    def n(self):
        return self.vectors.shape[1]

    def certificate(self, n=None):
        """``lambda_{n+1}^{-1/2}`` (0 when exhausted, inf when lambda is 0)."""
        n = self.n if n is None else n
        lam = self.eigenvalues[n]
        if np.isinf(lam):
            return 0.0
        return np.inf if lam <= 0 else float(lam ** -0.5)

    def truncated(self, n):
        if n > self.n:
            raise ValueError(f"only {self.n} eigenvectors available, asked for {n}")
        return LocalSpectralBasis(
            self.sub_id, self.eigenvalues[:n + 1].copy(), self.vectors[:, :n].copy(),
            self.psi_r, self.psi_d, self.includes_constant,
            None if self.multipliers is None else self.multipliers[:, :n],
            None if self.residuals is None else self.residuals[:n],
            self.iterations, self.dimension)


_ROUNDOFF = 100 * np.finfo(float).eps


def _k_orthonormalize(G, rtol=1e-13):
    """Coefficients C with C^T G C = I on the numerically nonzero part of G."""
    d = np.sqrt(np.maximum(np.diag(G), 0.0))
    ok = d > 0
    d_inv = np.zeros_like(d)
    d_inv[ok] = 1.0 / d[ok]
    Gn = G * np.outer(d_inv, d_inv)
    s, U = np.linalg.eigh((Gn + Gn.T) / 2)
    keep = s > rtol * max(s.max(), 0.0) if s.size else np.zeros(0, bool)
    return (d_inv[:, None] * U[:, keep]) / np.sqrt(s[keep])


def _b_clean(Y, P, B11, n1):
    """Triangular B-orthogonalization of Ritz vectors ordered by decreasing weight.

    Roundoff leaves each Ritz vector with an ``eps``-sized A-norm component of
    the vectors before it; those carry a much larger weighted norm, which
    spoils the eigen-residual of pairs high in the spectrum.  Removing them
    Gram-Schmidt style (in the B metric) keeps spans and Ritz values intact;
    the transform is unit upper triangular, so each column only loses its
    roundoff-sized admixture.
    """
    if Y.shape[1] < 2:
        return Y, P
    G = Y[:n1].T @ (B11 @ Y[:n1])
    d = np.sqrt(np.diag(G))
    Gs = (G + G.T) / 2 / np.outer(d, d)
    try:
        R = np.linalg.cholesky(Gs).T
    except np.linalg.LinAlgError:
        return Y, P
    T = sla.solve_triangular(R, np.diag(np.diag(R)))
    return Y @ T, P @ T


def eigen_residuals(system, P, Phi, lam):
    """``||A11 p - lam B11 phi1|| / (lam ||B11 phi1||)`` per column."""
    n1 = system.n1
    BP = system.B11 @ Phi[:n1]
    R = system.A11 @ P - BP * lam
    den = np.linalg.norm(BP, axis=0) * lam
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, np.linalg.norm(R, axis=0) / den, np.inf)


def solve_local_eigenpairs(system, fact, n_loc, tol=1e-9, max_iter=200, guard=3,
                           seed=0, with_particular=True):
    """Smallest eigenpairs of the local constrained eigenproblem.

    Blocked subspace iteration on the reduced pencil: ``P <- A11^{-1} B11 phi1(P)``
    with a Rayleigh-Ritz step on the A-harmonic iterates ``phi(P)`` in the
    ``a_{omega*}`` inner product.  Stops once every wanted Ritz value changes
    by less than ``tol`` (relative) and the eigen-residuals (see
    ``eigen_residuals``) are below ``tol`` or have stopped decreasing.
    """
    sub = system.sub
    neumann = system.neumann
    n_loc = int(n_loc)
    dim = system.n2 - 1 if neumann else system.n2      # dimension of the iteration space
    total = dim + 1 if neumann else dim
    if n_loc < 0 or n_loc > total:
        raise ValueError(f"subdomain {sub.id}: n_loc={n_loc} outside [0, {total}]")
    want = n_loc if neumann else n_loc + 1             # positive eigenvalues needed
    want = min(want, dim)

    A, A11, B11 = system.A, system.A11, system.B11
    n1 = system.n1
    nf = n1 + system.n2
    rng = np.random.default_rng([seed, sub.id])
    theta = np.zeros(0)
    Y = np.zeros((nf, 0))
    Pr = np.zeros((n1, 0))
    res = np.zeros(0)
    it = 0
    if want > 0:
        b = min(want + guard, dim)
        P = rng.standard_normal((n1, b))
        prev, history = theta, []
        a_norm = abs(A).sum(axis=1).max()
        b_norm = abs(B11).sum(axis=1).max()
        for it in range(1, max_iter + 1):
            Phi = np.vstack(apply_reduced_operator(fact, P))
            C = _k_orthonormalize(Phi.T @ (A @ Phi))
            Phi, P = Phi @ C, P @ C
            Bm = Phi[:n1].T @ (B11 @ Phi[:n1])
            mu, W = np.linalg.eigh((Bm + Bm.T) / 2)
            order = np.argsort(mu)[::-1]
            mu, W = mu[order], W[:, order]
            Y, Pr = Phi @ W, P @ W
            finite = mu > 1e-12 * max(mu.max(), 0.0) if mu.size else mu > 0
            Y[:, finite], Pr[:, finite] = _b_clean(Y[:, finite], Pr[:, finite], B11, n1)
            # Rayleigh quotients recomputed from the vectors for relative accuracy
            kq = np.einsum("ij,ij->j", Y, A @ Y)
            bq = np.einsum("ij,ij->j", Y[:n1], B11 @ Y[:n1])
            theta = np.full(len(mu), np.inf)
            theta[finite] = kq[finite] / bq[finite]
            res = np.full(len(mu), 0.0)
            res[finite] = eigen_residuals(system, Pr[:, finite], Y[:, finite], theta[finite])
            nw = min(want, int(finite.sum()))
            # Rayleigh quotients of pairs whose weighted form is tiny lose
            # relative accuracy to cancellation
            y2 = np.einsum("ij,ij->j", Y[:, :nw], Y[:, :nw])
            y12 = np.einsum("ij,ij->j", Y[:n1, :nw], Y[:n1, :nw])
            floor = _ROUNDOFF * (a_norm * y2 / kq[:nw] + b_norm * y12 / bq[:nw])
            changed = np.inf
            if nw and nw == len(prev):
                changed = np.max(np.abs(theta[:nw] - prev) / theta[:nw]
                                 / np.maximum(1.0, floor / tol))
            prev = theta[:nw].copy()
            rmax = float(np.max(res[:nw])) if nw else 0.0
            history.append(rmax)
            # residuals of pairs high in the spectrum bottom out at a roundoff
            # level; accept once they stop improving
            stalled = len(history) > 5 and min(history[-5:]) > 0.5 * min(history[:-5])
            # the first multipliers are random, so at least one refresh is needed
            if it > 1 and changed <= tol and (rmax <= tol or stalled):
                break
            P_next = fact.A11.solve(B11 @ Y[:n1, finite])
            missing = b - P_next.shape[1]
            if missing > 0:
                P_next = np.hstack([P_next, rng.standard_normal((n1, missing))])
            P = P_next
        else:
            raise EigenSolverError(
                sub.id, f"eigensolver not converged after {max_iter} iterations "
                f"(max residual {np.max(res[:want]):.2e})", res[:want])

    # assemble the ordered list of eigenpairs
    lam = list(theta[:want])
    vecs = [Y[:, k] for k in range(min(want, Y.shape[1]))]
    mults = [Pr[:, k] for k in range(min(want, Pr.shape[1]))]
    resid = list(res[:want])
    if neumann:
        one = np.ones(nf)
        nb = float(np.sqrt(one[:n1] @ (B11 @ one[:n1])))
        lam = [0.0] + lam
        vecs = [one / nb] + vecs
        mults = [np.zeros(n1)] + mults
        resid = [0.0] + resid
    lam = np.array(lam + [np.inf] * (n_loc + 1 - len(lam)))[:n_loc + 1]
    kept = [v for v, l in zip(vecs, lam[:n_loc]) if np.isfinite(l)]
    V = system.to_local(np.column_stack(kept) if kept else np.zeros((nf, 0)))
    basis = LocalSpectralBasis(
        sub.id, lam, V,
        solve_particular_r(system, fact) if with_particular else np.zeros(len(sub.nodes)),
        solve_particular_d(system, fact) if with_particular else np.zeros(len(sub.nodes)),
        neumann,
        np.column_stack(mults[:V.shape[1]]) if V.shape[1] else np.zeros((n1, 0)),
        np.array(resid[:V.shape[1]]), it, total)
    return basis


def adaptive_select(basis, tol_loc):
    """Smallest ``n`` with ``lambda_{n+1}^{-1/2} <= tol_loc``.

    Returns ``(n, certificate, reached)``.  Neumann subdomains always keep the
    constant (``n >= 1``).  If no available ``n`` reaches ``tol_loc`` the
    largest available ``n`` is returned with ``reached=False``.
    """
    lam = np.asarray(basis.eigenvalues)
    nmin = 1 if basis.includes_constant else 0
    navail = len(lam) - 1
    for n in range(nmin, navail + 1):
        cert = np.inf if lam[n] <= 0 else (0.0 if np.isinf(lam[n]) else lam[n] ** -0.5)
        if cert <= tol_loc:
            return n, float(cert), True
    n = navail
    cert = np.inf if lam[n] <= 0 else (0.0 if np.isinf(lam[n]) else lam[n] ** -0.5)
    return n, float(cert), False
