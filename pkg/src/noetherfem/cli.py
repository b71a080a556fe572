"""Command-line drivers for the benchmark studies and the property suite.

Exit status is 0 on success, 1 when a nonlinear or linear solve fails and
2 when a verification property fails.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adapt import AdaptConfig, AdaptError, AdaptProblem, adapt_loop
from .fespace import FEFunction, FunctionSpace, error_norms, eoc, interpolate_between
from .lagrangian import (
    InterpolatedSource,
    PLaplacian,
    benchmark_grad_u,
    benchmark_u,
    gaussian_grad_u,
    gaussian_source,
    gaussian_u,
    manufactured_f,
)
from .mesh import build_disk_mesh, build_square_mesh, uniform_refine, write_mesh
from .noether import NOETHER_SIGN, discrete_noether, estimator, symmetry_from_name
from .solver import NewtonConfig, NonConvergenceError, SolverError, newton_solve
from .verify import run_checks

log = logging.getLogger(__name__)

EXIT_OK, EXIT_SOLVER, EXIT_VERIFY = 0, 1, 2


@dataclass
class RunConfig:
    command: str = "convergence"
    domain: str = "disk"
    p: float = 3.0
    k: int = 1
    levels: int = 5
    sym: str = "rotation"
    theta: float = 0.5
    target_e: float = 0.05
    seed: int = 0
    out: Optional[str] = None
    tol: float = 1e-10
    n0: int = 4
    max_dofs: int = 10**6
    max_rounds: int = 40
    flip_sign: bool = False

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if self.k not in (1, 2, 3):
            raise ValueError("k must be 1, 2 or 3")
        if self.levels < 1:
            raise ValueError("at least one level is required")


class DriverError(RuntimeError):
    """A solve failed; ``rows`` holds the completed part of the table."""

    def __init__(self, message, rows):
        super().__init__(message)
        self.rows = rows


def _eoc_column(values, hs):
    if len(values) < 2:
        return 0.0
    return float(eoc(values[-2:], hs[-2:])[0])


# ----------------------------------------------------------------------
# drivers

CONVERGENCE_COLUMNS = (
    "dim_fes", "Lp_error", "Lp_EOC", "W1p_error", "W1p_EOC", "N",
    "h", "newton_iterations", "residual",
)


def run_convergence(cfg: RunConfig) -> list[dict]:
    """Disk benchmark ``u = sin(pi |x|^2)`` on uniformly refined meshes."""
    if cfg.domain != "disk":
        raise ValueError("the convergence study runs on the disk")
    if cfg.p < 2:
        raise ValueError("the disk benchmark source is unbounded at the origin for p < 2")
    sym = symmetry_from_name(cfg.sym)
    rows: list[dict] = []
    hs, lp, w1p = [], [], []
    U = None
    mesh = build_disk_mesh(0)
    for level in range(cfg.levels):
        if level:
            mesh = uniform_refine(mesh)
        V = FunctionSpace(mesh, cfg.k)
        # piecewise polynomial source keeps every discrete integrand polynomial
        src = InterpolatedSource(FunctionSpace(mesh, 2, dirichlet=False), lambda x: manufactured_f(cfg.p, x))
        model = PLaplacian(cfg.p, src)
        U0 = None if U is None else interpolate_between(U, V)
        newton = NewtonConfig(tol=cfg.tol, auto_continuation=U0 is None)
        try:
            res = newton_solve(V, model, newton, U0)
        except (NonConvergenceError, SolverError) as exc:
            raise DriverError(f"level {level}: {exc}", rows) from exc
        U = res.U
        e_lp, e_w = error_norms(U, benchmark_u, benchmark_grad_u, cfg.p)
        hs.append(mesh.h_max)
        lp.append(e_lp)
        w1p.append(e_w)
        rows.append(
            dict(
                dim_fes=V.dim,
                Lp_error=e_lp,
                Lp_EOC=_eoc_column(lp, hs),
                W1p_error=e_w,
                W1p_EOC=_eoc_column(w1p, hs),
                N=discrete_noether(V, model, sym, U),
                h=mesh.h_max,
                newton_iterations=res.iterations,
                residual=res.history[-1][2],
            )
        )
        log.info("level %d: %s", level, rows[-1])
    return rows


ESTIMATOR_COLUMNS = (
    "dofs", "L2_error", "L2_EOC", "H1_error", "H1_EOC", "E", "E_EOC", "N", "h",
)


def _square_problem(cfg: RunConfig):
    if cfg.domain != "square":
        raise ValueError("the estimator studies run on the square")
    if cfg.p != 2:
        raise ValueError("the square benchmark source is set up for p = 2")
    return PLaplacian(2.0, gaussian_source()), symmetry_from_name(cfg.sym)


def run_estimator(cfg: RunConfig) -> list[dict]:
    """Square benchmark ``u = exp(-10 |x|^2)`` with uniform refinement."""
    model, sym = _square_problem(cfg)
    mesh = build_square_mesh(cfg.n0, seed=cfg.seed)
    rows: list[dict] = []
    hs, l2, h1, Es = [], [], [], []
    for level in range(cfg.levels):
        if level:
            mesh = uniform_refine(mesh)
        V = FunctionSpace(mesh, cfg.k)
        U0 = FEFunction(V, np.zeros(V.dim), V.boundary_lift(gaussian_u))
        try:
            U = newton_solve(V, model, NewtonConfig(tol=cfg.tol), U0).U
        except (NonConvergenceError, SolverError) as exc:
            raise DriverError(f"level {level}: {exc}", rows) from exc
        report = estimator(V, model, sym, U)
        e2, e1 = error_norms(U, gaussian_u, gaussian_grad_u, 2.0)
        hs.append(mesh.h_max)
        l2.append(e2)
        h1.append(e1)
        Es.append(report.E_total)
        rows.append(
            dict(
                dofs=V.dim,
                L2_error=e2,
                L2_EOC=_eoc_column(l2, hs),
                H1_error=e1,
                H1_EOC=_eoc_column(h1, hs),
                E=report.E_total,
                E_EOC=_eoc_column(Es, hs),
                N=report.N_value,
                h=mesh.h_max,
            )
        )
        log.info("level %d: %s", level, rows[-1])
    return rows


def run_adapt(cfg: RunConfig):
    """Adaptive loop on the square benchmark."""
    model, sym = _square_problem(cfg)
    problem = AdaptProblem(
        build_square_mesh(cfg.n0, seed=cfg.seed),
        model,
        sym,
        cfg.k,
        boundary=gaussian_u,
        u_exact=gaussian_u,
        grad_exact=gaussian_grad_u,
        p=2.0,
        newton=NewtonConfig(tol=cfg.tol),
    )
    acfg = AdaptConfig(
        theta=cfg.theta, target_E=cfg.target_e, max_dofs=cfg.max_dofs, max_rounds=cfg.max_rounds
    )
    return adapt_loop(problem, acfg)


def run_verify(cfg: RunConfig) -> list[dict]:
    sign = -NOETHER_SIGN if cfg.flip_sign else NOETHER_SIGN
    return [c.as_dict() for c in run_checks(cfg.seed, sign=sign)]


# ----------------------------------------------------------------------
# output


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.15g}"


def write_table(rows: Sequence[dict], columns: Sequence[str], path: Optional[str]) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r[c]) for c in columns])
    finally:
        if path:
            fh.close()


def _write_text(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="noetherfem",
        description="Finite element Noether conservation studies for the p-Laplacian.",
    )
    ap.add_argument("--cmd", choices=("convergence", "estimator", "adapt", "verify"), default="convergence")
    ap.add_argument("--domain", choices=("disk", "square"), default=None)
    ap.add_argument("--p", type=float, default=None, help="exponent (default 3 on the disk, 2 on the square)")
    ap.add_argument("--k", type=int, default=1, choices=(1, 2, 3), help="polynomial degree")
    ap.add_argument("--levels", type=int, default=5, help="number of uniform levels")
    ap.add_argument("--sym", choices=("rotation", "translation-u"), default="rotation")
    ap.add_argument("--theta", type=float, default=0.5, help="maximum-strategy fraction")
    ap.add_argument("--target-e", type=float, default=0.05, help="estimator target for --cmd adapt")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None, help="output file (stdout when omitted)")
    ap.add_argument("--tol", type=float, default=1e-10, help="Newton residual tolerance")
    ap.add_argument("--n0", type=int, default=4, help="cells per side of the coarse square mesh")
    ap.add_argument("--max-dofs", type=int, default=10**6)
    ap.add_argument("--max-rounds", type=int, default=40)
    ap.add_argument("--flip-sign", action="store_true", help="mutation test: flip the Noether sign")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    square = ns.cmd in ("estimator", "adapt")
    domain = ns.domain or ("square" if square else "disk")
    p = ns.p if ns.p is not None else (2.0 if square else 3.0)
    return RunConfig(
        command=ns.cmd, domain=domain, p=p, k=ns.k, levels=ns.levels, sym=ns.sym,
        theta=ns.theta, target_e=ns.target_e, seed=ns.seed, out=ns.out, tol=ns.tol,
        n0=ns.n0, max_dofs=ns.max_dofs, max_rounds=ns.max_rounds, flip_sign=ns.flip_sign,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING)
    try:
        cfg = config_from_args(ns)
    except ValueError as exc:
        ap.error(str(exc))
    try:
        if cfg.command == "convergence":
            write_table(run_convergence(cfg), CONVERGENCE_COLUMNS, cfg.out)
        elif cfg.command == "estimator":
            write_table(run_estimator(cfg), ESTIMATOR_COLUMNS, cfg.out)
        elif cfg.command == "adapt":
            trace = run_adapt(cfg)
            _write_text(trace.to_csv(), cfg.out)
            if cfg.out:
                write_mesh(trace.mesh, cfg.out + ".mesh")
        else:
            checks = run_verify(cfg)
            _write_text(json.dumps(checks, indent=1) + "\n", cfg.out)
            if not all(c["passed"] for c in checks):
                return EXIT_VERIFY
    except ValueError as exc:
        ap.error(str(exc))
    except DriverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        columns = CONVERGENCE_COLUMNS if cfg.command == "convergence" else ESTIMATOR_COLUMNS
        write_table(exc.rows, columns, cfg.out)
        return EXIT_SOLVER
    except AdaptError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        _write_text(exc.trace.to_csv(), cfg.out)
        return EXIT_SOLVER
    return EXIT_OK
