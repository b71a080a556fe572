"""Estimator-driven adaptivity: SOLVE, ESTIMATE, MARK, REFINE."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fespace import FEFunction, FunctionSpace, error_norms, interpolate_between
from .lagrangian import LagrangianModel
from .mesh import Mesh, bisect, shape_regularity
from .noether import Symmetry, estimator
from .solver import NewtonConfig, NonConvergenceError, newton_solve

log = logging.getLogger(__name__)


@dataclass
class AdaptConfig:
    """Parameters of the adaptive loop.

    Attributes
    ----------
    theta : float
        Maximum-strategy fraction in ``(0, 1]``.
    target_E : float
        Stop once the estimator drops to this value.
    max_dofs : int
        Stop once a round reaches this many degrees of freedom.
    max_rounds : int
    form : str
        How local indicators combine into the estimator.
    """

    theta: float = 0.5
    target_E: float = 1e-3
    max_dofs: int = 10**6
    max_rounds: int = 40
    form: str = "l2"

    def __post_init__(self):
        if not 0 < self.theta <= 1:
            raise ValueError("theta must lie in (0, 1]")
        if not self.target_E > 0:
            raise ValueError("target_E must be positive")
        if self.max_rounds < 1 or self.max_dofs < 1:
            raise ValueError("max_rounds and max_dofs must be positive")


@dataclass
class AdaptProblem:
    """A variational problem on an initial mesh.

    ``boundary`` gives Dirichlet data (zero when absent); ``u_exact`` and
    ``grad_exact`` enable error columns in the trace.
    """

    mesh: Mesh
    model: LagrangianModel
    symmetry: Symmetry
    degree: int = 1
    boundary: Optional[Callable] = None
    u_exact: Optional[Callable] = None
    grad_exact: Optional[Callable] = None
    p: float = 2.0
    newton: NewtonConfig = field(default_factory=NewtonConfig)


@dataclass
class AdaptTrace:
    """Per-round record of an adaptive run."""

    rounds: list = field(default_factory=list)
    mesh: Optional[Mesh] = None
    solution: Optional[FEFunction] = None

    COLUMNS = ("round", "dofs", "E", "N", "lp_err", "w1p_err")
    EXTRA = ("triangles", "shape_regularity", "newton_iterations")

    def append(self, **row):
        self.rounds.append(row)

    @property
    def dofs(self) -> np.ndarray:
        return np.array([r["dofs"] for r in self.rounds])

    @property
    def E(self) -> np.ndarray:
        return np.array([r["E"] for r in self.rounds])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = self.COLUMNS + self.EXTRA
        w.writerow(cols)
        for r in self.rounds:
            w.writerow([_fmt(r[c]) for c in cols])
        return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.15g}"


class AdaptError(RuntimeError):
    """An adaptive run stopped early; ``trace`` holds the completed rounds."""

    def __init__(self, message, trace: AdaptTrace):
        super().__init__(message)
        self.trace = trace


def mark_maximum(indicators, theta: float) -> np.ndarray:
    """Indices whose indicator is at least ``theta`` times the largest one.

    Returns an empty array when all indicators vanish.
    """
    if not 0 < theta <= 1:
        raise ValueError("theta must lie in (0, 1]")
    eta = np.asarray(indicators, dtype=float)
    if eta.size == 0 or np.any(eta < 0) or not np.all(np.isfinite(eta)):
        raise ValueError("indicators must be finite, non-negative and non-empty")
    top = eta.max()
    if top == 0:
        return np.zeros(0, dtype=np.int64)
    return np.flatnonzero(eta >= theta * top)


def _initial_guess(space: FunctionSpace, problem: AdaptProblem, previous: Optional[FEFunction]):
    if previous is not None:
        return interpolate_between(previous, space, problem.boundary)
    lift = space.boundary_lift(problem.boundary) if problem.boundary is not None else None
    return FEFunction(space, np.zeros(space.dim), lift)


def adapt_loop(problem: AdaptProblem, config: Optional[AdaptConfig] = None) -> AdaptTrace:
    """Refine until the estimator reaches ``config.target_E`` or a limit is hit.

    Each round is warm-started from the previous solution interpolated onto
    the refined mesh.
    """
    cfg = config or AdaptConfig()
    trace = AdaptTrace()
    mesh = problem.mesh
    U = None
    for rnd in range(cfg.max_rounds):
        space = FunctionSpace(mesh, problem.degree)
        U0 = _initial_guess(space, problem, U)
        try:
            res = newton_solve(space, problem.model, problem.newton, U0)
        except NonConvergenceError as exc:
            raise AdaptError(f"solve failed in round {rnd}: {exc}", trace) from exc
        U = res.U
        report = estimator(space, problem.model, problem.symmetry, U, form=cfg.form)
        lp = w1p = float("nan")
        if problem.u_exact is not None and problem.grad_exact is not None:
            lp, w1p = error_norms(U, problem.u_exact, problem.grad_exact, problem.p)
        trace.append(
            round=rnd,
            dofs=space.dim,
            E=report.E_total,
            N=report.N_value,
            lp_err=lp,
            w1p_err=w1p,
            triangles=mesh.n_triangles,
            shape_regularity=shape_regularity(mesh),
            newton_iterations=res.iterations,
        )
        trace.mesh, trace.solution = mesh, U
        log.info("round %d: dofs=%d E=%.4e", rnd, space.dim, report.E_total)
        if report.E_total <= cfg.target_E or space.dim >= cfg.max_dofs:
            break
        marked = mark_maximum(report.cell_indicators(mesh), cfg.theta)
        if len(marked) == 0:
            break
        mesh = bisect(mesh, marked)
    return trace
