"""Fine reference solve, coarse GFEM space, Galerkin solve and error checks."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg import lapack
from scipy.sparse.linalg import cg, splu

from .assembly import (NumericalBreakdown, assemble_load, assemble_mass,
                       assemble_stiffness, energy_norm, h1_norm)
from .grid import DIRICHLET
from .local_solver import (adaptive_select, factorize_local, local_system,
                           solve_local_eigenpairs)
from .oracle import best_local_error


class CoarseSpaceError(ValueError):
    """Missing bases or numerically dependent coarse columns."""

    def __init__(self, msg, column=None, sub_id=None, k=None):
        super().__init__(msg)
        self.column, self.sub_id, self.k = column, sub_id, k


class BoundViolation(AssertionError):
    def __init__(self, report):
        super().__init__(
            f"global bound violated: {report.lhs:.6e} > {report.rhs:.6e}; "
            f"worst local ratio {report.worst_local()}")
        self.report = report


@dataclass
class GlobalSystem:
    """Global stiffness and load with the Dirichlet lifting data."""

    K: sp.csr_matrix
    F: np.ndarray
    free: np.ndarray
    dirichlet: np.ndarray
    q: np.ndarray


def assemble_global(mesh, coeff, tags, data):
    K = assemble_stiffness(mesh, coeff)
    F = assemble_load(mesh, data, tags)
    dn = np.flatnonzero(tags.node_tag == DIRICHLET)
    free = np.flatnonzero(tags.node_tag != DIRICHLET)
    xy = mesh.node_coords()[dn]
    q = np.broadcast_to(data.q(xy[:, 0], xy[:, 1]), (len(dn),)).astype(float)
    return GlobalSystem(K, F, free, dn, q)


def fine_solve(mesh, coeff, tags, data, system=None, method="direct", rtol=1e-10):
    """Reference finite element solution ``u_h^e`` on all nodes.

    Dirichlet values are lifted and the free block is solved by sparse LU
    (``method="direct"``) or Jacobi-preconditioned CG (``method="cg"``, also
    used if LU runs out of memory).  The free-DOF residual is checked against
    ``rtol``.
    """
    gs = system if system is not None else assemble_global(mesh, coeff, tags, data)
    u = np.zeros(mesh.n_nodes)
    u[gs.dirichlet] = gs.q
    Kff = sp.csc_matrix(gs.K[gs.free][:, gs.free])
    rhs = gs.F[gs.free] - gs.K[gs.free][:, gs.dirichlet] @ gs.q
    nrm = np.linalg.norm(rhs)
    if nrm == 0:
        return u
    x = None
    if method == "direct":
        try:
            lu = splu(Kff, permc_spec="MMD_AT_PLUS_A")
            x = lu.solve(rhs)
            r = rhs - Kff @ x
            if np.linalg.norm(r) > rtol * nrm:
                x += lu.solve(r)          # one step of refinement
        except MemoryError:
            x = None
    elif method != "cg":
        raise ValueError(f"unknown fine solver {method!r}")
    if x is None:
        d = Kff.diagonal()
        x, info = cg(Kff, rhs, rtol=1e-12, maxiter=20 * Kff.shape[0],
                     M=sp.diags(1.0 / d))
        if info != 0:
            raise NumericalBreakdown(f"CG did not converge (info={info})")
    res = np.linalg.norm(rhs - Kff @ x) / nrm
    if not np.isfinite(res) or res > max(rtol, 1e-12 if method == "cg" else rtol):
        raise NumericalBreakdown(f"fine solve residual {res:.3e} exceeds {rtol:.1e}")
    u[gs.free] = x
    return u


@dataclass
class CoarseSpace:
    """Columns ``chi_i phi_{i,k}`` on global nodes and the particular vector."""

    Phi: sp.csc_matrix
    u_p: np.ndarray
    index: list                   # column -> (subdomain id, local k)
    counts: list                  # columns per subdomain

    @property
    def n_cols(self):
        return self.Phi.shape[1]

    def columns_of(self, sub_id):
        start = sum(self.counts[:sub_id])
        return np.arange(start, start + self.counts[sub_id])


def build_coarse_space(decomp, bases, n_nodes=None):
    """Assemble the trial space from per-subdomain bases (ordered by id)."""
    subs = decomp.subdomains
    n_nodes = n_nodes if n_nodes is not None else (decomp.nx + 1) * (decomp.ny + 1)
    if len(bases) != len(subs) or any(b is None for b in bases):
        missing = [s.id for s, b in zip(subs, list(bases) + [None] * len(subs)) if b is None]
        raise CoarseSpaceError(f"missing local bases for subdomains {missing}")
    u_p = np.zeros(n_nodes)
    rows, cols, vals = [], [], []
    index, counts = [], []
    col = 0
    for s, b in zip(subs, bases):
        if b.sub_id != s.id:
            raise CoarseSpaceError(f"basis for subdomain {b.sub_id} given in slot {s.id}")
        u_p[s.nodes] += s.chi * b.psi
        on = np.flatnonzero(s.chi)
        V = s.chi[on, None] * b.vectors[on]
        for k in range(V.shape[1]):
            nz = np.flatnonzero(V[:, k])
            rows.append(s.nodes[on[nz]])
            cols.append(np.full(nz.size, col))
            vals.append(V[nz, k])
            index.append((s.id, k))
            col += 1
        counts.append(V.shape[1])
    if col:
        Phi = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n_nodes, col))
    else:
        Phi = sp.csc_matrix((n_nodes, 0))
    return CoarseSpace(Phi, u_p, index, counts)


@dataclass
class GfemSolution:
    u_s: np.ndarray
    u_G: np.ndarray
    coarse: CoarseSpace
    galerkin_residual: float      # ||Phi^T (F - K u_G)|| / ||Phi^T F||
    report: dict = field(default_factory=dict)


def coarse_solve(coarse, K, F, pivot_rtol=1e-12):
    """Galerkin solve in the affine space ``u_p + span(Phi)``.

    The Gram matrix is Jacobi scaled and factored by pivoted Cholesky; a
    pivot below ``pivot_rtol`` flags a numerically dependent column.
    """
    Phi, u_p = coarse.Phi, coarse.u_p
    n = coarse.n_cols
    r = F - K @ u_p
    if n == 0:
        return GfemSolution(np.zeros(0), u_p.copy(), coarse, 0.0)
    KP = K @ Phi
    G = np.asarray((Phi.T @ KP).todense())
    G = (G + G.T) / 2
    rhs = Phi.T @ r
    d = np.diag(G).copy()
    if np.any(d <= 0):
        j = int(np.flatnonzero(d <= 0)[0])
        sid, k = coarse.index[j]
        raise CoarseSpaceError(f"coarse column {j} (subdomain {sid}, k={k}) has zero energy",
                               j, sid, k)
    s = 1.0 / np.sqrt(d)
    Gs = G * np.outer(s, s)
    c, piv, rank, info = lapack.dpstrf(Gs, lower=0, tol=pivot_rtol)
    if info < 0:
        raise NumericalBreakdown(f"dpstrf failed (info={info})")
    piv = piv - 1
    if rank < n:
        j = int(piv[rank])
        sid, k = coarse.index[j]
        raise CoarseSpaceError(
            f"coarse Gram matrix numerically singular (rank {rank} of {n}); "
            f"column {j} (subdomain {sid}, k={k}) is nearly dependent", j, sid, k)
    U = np.triu(c)
    y = sla.solve_triangular(U, (s * rhs)[piv], trans="T")
    z = sla.solve_triangular(U, y)
    x = np.empty(n)
    x[piv] = z
    u_s = s * x
    u_G = u_p + Phi @ u_s
    ref = np.linalg.norm(Phi.T @ F)
    gres = np.linalg.norm(Phi.T @ (F - K @ u_G))
    return GfemSolution(u_s, u_G, coarse, float(gres / ref) if ref > 0 else float(gres))


@dataclass
class ErrorReport:
    h1_abs: float
    h1_rel: float
    energy_abs: float
    energy_rel: float


def error_report(u_ref, u, mesh, coeff, K=None, K_unit=None, M=None):
    """Relative and absolute H1 and energy errors of ``u`` against ``u_ref``."""
    K = assemble_stiffness(mesh, coeff) if K is None else K
    K_unit = assemble_stiffness(mesh, None) if K_unit is None else K_unit
    M = assemble_mass(mesh) if M is None else M
    u_ref = np.asarray(u_ref, dtype=float)
    e = u_ref - np.asarray(u, dtype=float)
    h1_ref = h1_norm(K_unit, M, u_ref)
    en_ref = energy_norm(K, u_ref)
    if h1_ref == 0:
        raise ValueError("reference solution has zero norm")
    h1_e, en_e = h1_norm(K_unit, M, e), energy_norm(K, e)
    return ErrorReport(h1_e, h1_e / h1_ref, en_e, en_e / en_ref if en_ref > 0 else np.inf)


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    holds: bool
    kappa: int
    kappa_star: int
    certificates: np.ndarray      # lambda_{n_i+1}^{-1/2} per subdomain
    u_energy: float
    local_ratios: np.ndarray = None

    @property
    def rhs_relative(self):
        return self.rhs / self.u_energy if self.u_energy > 0 else 0.0

    @property
    def slack(self):
        return self.rhs / self.lhs if self.lhs > 0 else np.inf

    def worst_local(self):
        if self.local_ratios is None:
            return "n/a"
        i = int(np.nanargmax(self.local_ratios))
        return f"{self.local_ratios[i]:.4g} (subdomain {i})"


def local_bound_ratios(u_e, decomp, bases, systems, ns=None):
    """Per subdomain ``best_local_error(n_i) / (cert_i * ||u_e||_{a,omega*})``."""
    out = np.full(len(bases), np.nan)
    for i, (s, b, sys_) in enumerate(zip(decomp.subdomains, bases, systems)):
        n = b.n if ns is None else ns[i]
        u_loc = u_e[s.nodes]
        err = best_local_error(u_loc, b, sys_, n)
        cert = b.certificate(n)
        scale = cert * energy_norm(sys_.K, u_loc)
        out[i] = err / scale if scale > 0 else (0.0 if err == 0 else np.inf)
    return out


def verify_global_bound(u_e, solution, decomp, bases, K, systems=None, strict=False,
                        rtol=1e-8, atol=1e-10):
    """Check ``||u_e - u_G||_a <= sqrt(kappa kappa*) max_i cert_i ||u_e||_a``.

    The right side gets the relative slack ``rtol`` plus ``atol * ||u_e||_a``
    so that exhausted local spaces (certificate 0) are judged up to roundoff.

    With ``systems`` given the per-subdomain local ratios are computed when the
    bound fails (or always if ``strict`` is ``"always"``); ``strict=True``
    raises :class:`BoundViolation` on failure.
    """
    certs = np.array([b.certificate() for b in bases])
    ue = energy_norm(K, u_e)
    lhs = energy_norm(K, u_e - solution.u_G)
    rhs = np.sqrt(decomp.kappa * decomp.kappa_star) * certs.max() * ue
    holds = bool(lhs <= rhs * (1 + rtol) + atol * ue)
    rep = BoundReport(lhs, rhs, holds, decomp.kappa, decomp.kappa_star, certs, ue)
    if systems is not None and (not holds or strict == "always"):
        rep.local_ratios = local_bound_ratios(u_e, decomp, bases, systems)
    if strict is True and not holds:
        raise BoundViolation(rep)
    return rep


def save_nodal_field(path, mesh, u):
    """Text dump: header ``nx ny`` then ``ny+1`` rows of ``nx+1`` nodal values."""
    U = np.asarray(u).reshape(mesh.ny + 1, mesh.nx + 1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{mesh.nx} {mesh.ny}\n")
        for row in U:
            fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def load_nodal_field(path):
    with open(path, encoding="utf-8") as fh:
        nx, ny = (int(t) for t in fh.readline().split())
        vals = np.array(fh.read().split(), dtype=float)
    if vals.size != (nx + 1) * (ny + 1):
        raise ValueError(f"{path}: expected {(nx + 1) * (ny + 1)} values, got {vals.size}")
    return nx, ny, vals


# ---------------------------------------------------------------------------
# driver


@dataclass
class LocalResult:
    basis: object
    system: object
    seconds: float


def solve_local(mesh, coeff, tags, data, sub, n_loc, tol=1e-9, pou_mode="nodal",
                seed=0, keep_system=False):
    t0 = time.perf_counter()
    system = local_system(mesh, coeff, tags, data, sub, pou_mode)
    fact = factorize_local(system)
    dim = system.n2
    basis = solve_local_eigenpairs(system, fact, min(n_loc, dim), tol=tol, seed=seed)
    return LocalResult(basis, system if keep_system else None, time.perf_counter() - t0)


def solve_all_local(mesh, coeff, tags, data, decomp, n_loc, tol=1e-9, pou_mode="nodal",
                    threads=1, seed=0, keep_systems=False):
    """Local solves for every subdomain; results ordered by subdomain id."""
    def job(sub):
        return solve_local(mesh, coeff, tags, data, sub, n_loc, tol, pou_mode, seed,
                           keep_systems)

    subs = decomp.subdomains
    if threads <= 1:
        return [job(s) for s in subs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(job, subs))


def select_bases(bases, n_loc=None, tol_loc=None):
    """Cut precomputed bases to ``n_loc`` vectors or adaptively to ``tol_loc``."""
    if (n_loc is None) == (tol_loc is None):
        raise ValueError("exactly one of n_loc and tol_loc must be given")
    out = []
    for b in bases:
        if tol_loc is not None:
            n, _, _ = adaptive_select(b, tol_loc)
        else:
            n = n_loc
        out.append(b.truncated(min(n, b.n)))
    return out


@dataclass
class PipelineResult:
    u_e: np.ndarray
    solution: GfemSolution
    errors: ErrorReport
    bound: BoundReport
    bases: list
    decomp: object
    timings: dict
    systems: list = None


def run_gfem(mesh, coeff, tags, data, decomp, n_loc=None, tol_loc=None, n_max=None,
             eig_tol=1e-9, pou_mode="nodal", threads=1, seed=0, fine_method="direct",
             u_e=None, local=None, keep_systems=False, strict=False):
    """Fine solve, local solves, coarse solve and the bound check in one call.

    ``local`` may hold results of :func:`solve_all_local` computed with enough
    eigenpairs; they are cut to ``n_loc`` (or adaptively to ``tol_loc``).
    """
    timings = {}
    gs = assemble_global(mesh, coeff, tags, data)
    t0 = time.perf_counter()
    if u_e is None:
        u_e = fine_solve(mesh, coeff, tags, data, system=gs, method=fine_method)
    timings["fine"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if local is None:
        need = n_loc if tol_loc is None else (n_max if n_max is not None else 20)
        local = solve_all_local(mesh, coeff, tags, data, decomp, need, eig_tol, pou_mode,
                                threads, seed, keep_systems)
    timings["local"] = time.perf_counter() - t0
    bases = select_bases([r.basis for r in local], n_loc, tol_loc)
    systems = [r.system for r in local] if keep_systems else None

    t0 = time.perf_counter()
    coarse = build_coarse_space(decomp, bases, mesh.n_nodes)
    sol = coarse_solve(coarse, gs.K, gs.F)
    timings["coarse"] = time.perf_counter() - t0

    errs = error_report(u_e, sol.u_G, mesh, coeff, K=gs.K)
    bound = verify_global_bound(u_e, sol, decomp, bases, gs.K, systems, strict)
    sol.report = {"err_h1_rel": errs.h1_rel, "err_energy_rel": errs.energy_rel,
                  "bound_rhs": bound.rhs}
    return PipelineResult(u_e, sol, errs, bound, bases, decomp, timings, systems)
