"""Command line driver: single runs, parameter sweeps, eigenvalue dumps, validation.

Parameters come from an optional ``key = value`` config file (``#`` starts a
comment) and are overridden by flags of the same name, e.g. ``--n_loc 10``.
"""

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import decomp as dc
from . import gfem, grid
from . import local_solver as ls
from . import oracle

CSV_HEADER = ["run_id", "nx", "ny", "m", "overlap", "ell", "n_loc", "H_ratio",
              "err_h1_rel", "err_energy_rel", "bound_rhs", "kappa", "kappa_star",
              "t_fine_s", "t_local_s", "t_coarse_s"]
EIG_HEADER = ["subdomain_id", "k", "lambda_k", "lambda_k_inv_sqrt"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    nx: int = 64
    ny: int = 64
    m: int = 2
    overlap: int = 2
    ell: int = 4
    n_loc: int = None
    tol_loc: float = None
    n_max: int = 20                     # eigenpairs computed in adaptive mode
    coefficient: str = "channels_inclusions"   # builtin name or file path
    contrast: float = None
    period: int = None
    orientation: str = None
    coef_seed: int = None
    count: int = None
    radius: float = None
    problem: str = "benchmark"           # benchmark | constant
    f: float = 0.0                      # constant problem data
    g: float = 0.0
    q: float = 1.0
    eig_tol: float = 1e-9
    pou_mode: str = "nodal"
    fine_solver: str = "direct"
    seed: int = 0
    threads: int = None
    csv: str = None
    solution: str = None
    strict: bool = False

    def __post_init__(self):
        if (self.n_loc is None) == (self.tol_loc is None):
            raise ConfigError("exactly one of n_loc and tol_loc must be set")
        if self.n_loc is not None and self.n_loc < 0:
            raise ConfigError("n_loc must be >= 0")
        if self.tol_loc is not None and not self.tol_loc > 0:
            raise ConfigError("tol_loc must be positive")
        if self.ell < 1 or self.overlap < 1:
            raise ConfigError("ell and overlap must be >= 1")
        if self.nx < 1 or self.ny < 1 or self.m < 1:
            raise ConfigError("nx, ny and m must be positive")
        if self.problem not in ("benchmark", "constant"):
            raise ConfigError(f"unknown problem preset {self.problem!r}")
        if self.pou_mode not in ("nodal", "exact"):
            raise ConfigError(f"unknown pou_mode {self.pou_mode!r}")
        if self.fine_solver not in ("direct", "cg"):
            raise ConfigError(f"unknown fine_solver {self.fine_solver!r}")

    def run_id(self):
        """Hash of everything that determines the numbers (not outputs or threads)."""
        d = asdict(self)
        for k in ("threads", "csv", "solution", "strict"):
            d.pop(k)
        return hashlib.sha1(json.dumps(d, sort_keys=True).encode()).hexdigest()[:12]

    def coefficient_params(self):
        names = {"contrast": "contrast", "period": "period", "orientation": "orientation",
                 "coef_seed": "seed", "count": "count", "radius": "radius"}
        return {v: getattr(self, k) for k, v in names.items() if getattr(self, k) is not None}


_KEYS = {f.name for f in fields(RunConfig)}
_CASTS = {"nx": int, "ny": int, "m": int, "overlap": int, "ell": int, "n_loc": int,
          "tol_loc": float, "n_max": int, "contrast": float, "period": int,
          "coef_seed": int, "count": int, "radius": float, "f": float, "g": float,
          "q": float, "eig_tol": float, "seed": int, "threads": int}


def _cast(key, value):
    if key not in _KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    if key == "strict":
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    cast = _CASTS.get(key, str)
    try:
        return cast(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def parse_config_file(path):
    """Read ``key = value`` lines into a dict of typed values."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key] = _cast(key, value)
    return out


def make_config(file=None, defaults=None, **overrides):
    """Defaults, then the config file, then explicit overrides."""
    vals = {k: _cast(k, v) for k, v in (defaults or {}).items()}
    if file:
        vals.update(parse_config_file(file))
    vals.update({k: _cast(k, v) for k, v in overrides.items() if v is not None})
    if "n_loc" in overrides and overrides["n_loc"] is not None:
        vals.pop("tol_loc", None)
    elif "tol_loc" in overrides and overrides["tol_loc"] is not None:
        vals.pop("n_loc", None)
    return RunConfig(**vals)


def thread_count(cfg):
    if cfg.threads is not None:
        return max(1, cfg.threads)
    env = os.environ.get("MSGFEM_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise ConfigError(f"MSGFEM_THREADS must be an integer, got {env!r}") from None


# ---------------------------------------------------------------------------
# building blocks


@dataclass
class Problem:
    mesh: object
    tags: object
    coeff: object
    data: object


def build_problem(cfg):
    mesh = grid.build_mesh(cfg.nx, cfg.ny)
    tags = grid.classify_boundary(mesh)
    if os.path.exists(cfg.coefficient):
        coeff = grid.load_coefficient(cfg.coefficient, mesh)
    else:
        coeff = grid.builtin_coefficient(cfg.coefficient, mesh, **cfg.coefficient_params())
    if cfg.problem == "benchmark":
        data = grid.benchmark_problem()
    else:
        data = grid.constant_problem(cfg.f, cfg.g, cfg.q)
    return Problem(mesh, tags, coeff, data)


def h_ratio(decomp):
    """Mean ``H_i / H_i*`` over unclipped subdomains (all of them if none is)."""
    subs = [s for s in decomp.subdomains if not s.clipped] or decomp.subdomains
    return float(np.mean([s.H / s.H_star for s in subs]))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def result_row(cfg, res):
    decomp = res.decomp
    n_used = max(b.n for b in res.bases)
    row = [cfg.run_id(), cfg.nx, cfg.ny, cfg.m, cfg.overlap, cfg.ell,
           cfg.n_loc if cfg.n_loc is not None else n_used, h_ratio(decomp),
           res.errors.h1_rel, res.errors.energy_rel, res.bound.rhs_relative,
           decomp.kappa, decomp.kappa_star,
           res.timings["fine"], res.timings["local"], res.timings["coarse"]]
    return [_fmt(v) for v in row]


def write_rows(path, header, rows, append=True):
    """Write rows, adding the header when the file is new or empty."""
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    if exists:
        with open(path, encoding="utf-8") as fh:
            first = fh.readline().rstrip("\r\n")
        if first != ",".join(header):
            raise ConfigError(f"{path}: existing CSV header does not match")
    with open(path, "a" if exists else "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(header)
        w.writerows(rows)


def _emit(cfg, header, rows, out=None):
    path = out or cfg.csv
    if path:
        write_rows(path, header, rows)
    else:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# operations


def run(cfg, problem=None, u_e=None, local=None, decomp=None):
    """One full pipeline run; returns ``(row, PipelineResult)``."""
    p = problem or build_problem(cfg)
    d = decomp or dc.decompose(p.mesh, p.tags, cfg.m, cfg.overlap, cfg.ell)
    res = gfem.run_gfem(p.mesh, p.coeff, p.tags, p.data, d, n_loc=cfg.n_loc,
                        tol_loc=cfg.tol_loc, n_max=cfg.n_max, eig_tol=cfg.eig_tol,
                        pou_mode=cfg.pou_mode, threads=thread_count(cfg), seed=cfg.seed,
                        fine_method=cfg.fine_solver, u_e=u_e, local=local,
                        strict=cfg.strict)
    if cfg.solution:
        gfem.save_nodal_field(cfg.solution, p.mesh, res.solution.u_G)
    return result_row(cfg, res), res


def sweep(cfg, axis, values):
    """Rows for each value of ``axis`` (``n_loc``, ``ell`` or ``m``).

    The fine solution is computed once; along ``n_loc`` the local bases are
    computed once at the largest value and truncated.
    """
    if axis not in ("n_loc", "ell", "m"):
        raise ConfigError(f"sweep axis must be n_loc, ell or m, got {axis!r}")
    values = [int(v) for v in values]
    if not values or values != sorted(values):
        raise ConfigError("sweep values must be nonempty and ascending")
    if axis == "n_loc" and cfg.n_loc is None:
        cfg = replace(cfg, tol_loc=None, n_loc=values[-1])
    p = build_problem(cfg)
    gs = gfem.assemble_global(p.mesh, p.coeff, p.tags, p.data)
    t0 = time.perf_counter()
    u_e = gfem.fine_solve(p.mesh, p.coeff, p.tags, p.data, system=gs, method=cfg.fine_solver)
    t_fine = time.perf_counter() - t0
    rows = []
    local = decomp = None
    t_local = 0.0
    if axis == "n_loc":
        decomp = dc.decompose(p.mesh, p.tags, cfg.m, cfg.overlap, cfg.ell)
        t0 = time.perf_counter()
        local = gfem.solve_all_local(p.mesh, p.coeff, p.tags, p.data, decomp, values[-1],
                                     cfg.eig_tol, cfg.pou_mode, thread_count(cfg), cfg.seed)
        t_local = time.perf_counter() - t0
    for v in values:
        c = replace(cfg, **{axis: v})
        row, res = run(c, p, u_e, local, decomp)
        res.timings["fine"] = t_fine
        if local is not None:
            res.timings["local"] = t_local
        rows.append(result_row(c, res))
    return rows


def dump_eigenvalues(cfg, ids=None):
    """Rows ``subdomain_id, k, lambda_k, lambda_k^{-1/2}`` with ``k`` from 1."""
    p = build_problem(cfg)
    d = dc.decompose(p.mesh, p.tags, cfg.m, cfg.overlap, cfg.ell)
    n_sub = len(d.subdomains)
    ids = list(range(n_sub)) if ids is None else [int(i) for i in ids]
    bad = [i for i in ids if not 0 <= i < n_sub]
    if bad:
        raise ConfigError(f"unknown subdomain id(s) {bad}; valid ids are 0..{n_sub - 1}")
    n = cfg.n_loc if cfg.n_loc is not None else cfg.n_max
    rows = []
    for i in ids:
        r = gfem.solve_local(p.mesh, p.coeff, p.tags, p.data, d.subdomains[i], n,
                             cfg.eig_tol, cfg.pou_mode, cfg.seed)
        for k, lam in enumerate(r.basis.eigenvalues, 1):
            inv = np.inf if lam == 0 else (0.0 if np.isinf(lam) else lam ** -0.5)
            rows.append([str(i), str(k), _fmt(lam), _fmt(inv)])
    return rows


VALIDATION_PRESET = dict(nx=32, ny=32, m=2, overlap=2, ell=4, n_loc=6,
                         coefficient="channels", contrast=1e3)


def validate(cfg, residual_tol=1e-6):
    """Oracle and inequality checks on a desk-scale configuration.

    Returns a list of ``(name, passed, detail)``.
    """
    p = build_problem(cfg)
    d = dc.decompose(p.mesh, p.tags, cfg.m, cfg.overlap, cfg.ell)
    n = cfg.n_loc if cfg.n_loc is not None else cfg.n_max
    res = gfem.run_gfem(p.mesh, p.coeff, p.tags, p.data, d, n_loc=n, eig_tol=cfg.eig_tol,
                        pou_mode=cfg.pou_mode, threads=thread_count(cfg), seed=cfg.seed,
                        keep_systems=True)
    u_e = res.u_e
    checks = []

    worst_res = worst_eig = worst_orth = worst_harm = worst_loc = 0.0
    for s, b, system in zip(d.subdomains, res.bases, res.systems):
        # eigenpair residuals of the retained pairs
        k0 = 1 if b.includes_constant else 0
        if b.n > k0:
            lam = b.eigenvalues[k0:b.n]
            Y = b.vectors[s.free][:, k0:]
            r = ls.eigen_residuals(system, b.multipliers[:, k0:], Y, lam)
            worst_res = max(worst_res, float(np.max(r)))
        # dense oracle equivalence
        H = oracle.dense_harmonic_basis(system)
        ds = oracle.dense_eigensolve(H, system.A, system.B11)
        k = min(b.n + 1, len(ds.eigenvalues))
        ref, got = ds.eigenvalues[:k], b.eigenvalues[:k]
        rel = np.abs(got - ref) / np.where(ref > 0, ref, 1.0)
        worst_eig = max(worst_eig, float(rel.max()))
        # orthogonal decomposition
        u_loc = u_e[s.nodes]
        w = u_loc - b.psi
        nu, npsi = gfem.energy_norm(system.K, u_loc), gfem.energy_norm(system.K, b.psi)
        if nu * npsi > 0:
            worst_orth = max(worst_orth, abs(w @ (system.K @ b.psi)) / (nu * npsi))
        rr = (system.K @ w)[s.b1]
        worst_harm = max(worst_harm, float(np.abs(rr).max() / (abs(system.K).max() * np.abs(w).max()
                                                                 + 1e-300)))
        # local n-width bounds
        for nn in range(1, b.n + 1):
            err = oracle.best_local_error(u_loc, b, system, nn)
            bound = b.certificate(nn) * nu
            worst_loc = max(worst_loc, err / bound if bound > 0 else (0.0 if err < 1e-12 * nu else np.inf))

    checks.append(("eigenpair residuals", worst_res <= residual_tol,
                   f"max relative residual {worst_res:.3e} (limit {residual_tol:.0e})"))
    checks.append(("dense oracle eigenvalues", worst_eig <= 1e-8,
                   f"max relative deviation {worst_eig:.3e} (limit 1e-08)"))
    checks.append(("orthogonal decomposition", worst_orth <= 1e-9 and worst_harm <= 1e-8,
                   f"max |a(u-psi, psi)| ratio {worst_orth:.3e}, harmonic residual {worst_harm:.3e}"))
    checks.append(("local n-width bounds", worst_loc <= 1 + 1e-8,
                   f"max error/certificate ratio {worst_loc:.6f}"))
    checks.append(("galerkin orthogonality", res.solution.galerkin_residual <= 1e-9,
                   f"relative residual {res.solution.galerkin_residual:.3e}"))
    checks.append(("global bound", res.bound.holds,
                   f"{res.bound.lhs:.6e} <= {res.bound.rhs:.6e}"))
    return checks


# ---------------------------------------------------------------------------
# argument parsing


def _add_config_args(ap):
    ap.add_argument("--config", help="key = value file; flags override its entries")
    for f in fields(RunConfig):
        if f.name == "strict":
            ap.add_argument("--strict", action="store_const", const=True, default=None,
                            help="nonzero exit if the global bound check fails")
            continue
        names = ["--" + f.name]
        if "_" in f.name:
            names.append("--" + f.name.replace("_", "-"))
        ap.add_argument(*names, dest=f.name, default=None)


def _config_from_args(args, defaults=None):
    over = {f.name: getattr(args, f.name) for f in fields(RunConfig)
            if getattr(args, f.name, None) is not None}
    return make_config(args.config, defaults, **over)


def build_parser():
    ap = argparse.ArgumentParser(prog="msgfem", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one GFEM run, one CSV row")
    _add_config_args(p)

    p = sub.add_parser("sweep", help="one CSV row per value of an axis")
    _add_config_args(p)
    p.add_argument("--axis", required=True, choices=["n_loc", "ell", "m"])
    p.add_argument("--values", required=True, help="comma separated, ascending")

    p = sub.add_parser("eig-dump", help="local eigenvalues as CSV")
    _add_config_args(p)
    p.add_argument("--ids", help="comma separated subdomain ids (default: all)")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("validate", help="oracle and bound checks on a small preset")
    _add_config_args(p)
    return ap


def _module_of(exc):
    mod = type(exc).__module__
    return mod if mod.startswith("msgfem") else "msgfem"


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _config_from_args(args)
            try:
                row, res = run(cfg)
            except gfem.BoundViolation as exc:
                print(f"msgfem.gfem: {exc}", file=sys.stderr)
                return 1
            _emit(cfg, CSV_HEADER, [row])
            if not res.bound.holds:
                print(f"warning: global bound not satisfied "
                      f"({res.bound.lhs:.6e} > {res.bound.rhs:.6e})", file=sys.stderr)
        elif args.command == "sweep":
            cfg = _sweep_config(args) if args.axis == "n_loc" else _config_from_args(args)
            rows = sweep(cfg, args.axis, args.values.split(","))
            _emit(cfg, CSV_HEADER, rows)
        elif args.command == "eig-dump":
            cfg = _config_from_args(args)
            ids = args.ids.split(",") if args.ids else None
            rows = dump_eigenvalues(cfg, ids)
            if args.out:
                write_rows(args.out, EIG_HEADER, rows, append=False)
            else:
                _emit(replace(cfg, csv=None), EIG_HEADER, rows)
        elif args.command == "validate":
            cfg = _config_from_args(args, VALIDATION_PRESET)
            checks = validate(cfg)
            for name, ok, detail in checks:
                print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
            return 0 if all(ok for _, ok, _ in checks) else 1
    except Exception as exc:        # report with the originating module
        print(f"{_module_of(exc)}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def _sweep_config(args):
    """For an ``n_loc`` sweep the axis values supply ``n_loc``."""
    over = {f.name: getattr(args, f.name) for f in fields(RunConfig)
            if getattr(args, f.name, None) is not None}
    over.pop("tol_loc", None)
    over["n_loc"] = args.values.split(",")[-1]
    return make_config(args.config, **over)


if __name__ == "__main__":
    sys.exit(main())
