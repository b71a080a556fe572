"""Assembly and Newton solution of the discrete Euler-Lagrange equations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .fespace import FEFunction, FunctionSpace
from .lagrangian import LagrangianModel, PLaplacian

log = logging.getLogger(__name__)

DIRECT_SOLVE_LIMIT = 2000


class SolverError(RuntimeError):
    """Linear solver breakdown (indefinite matrix or no convergence)."""


class NonConvergenceError(RuntimeError):
    """Newton iteration did not reach the tolerance."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class NewtonConfig:
    tol: float = 1e-10
    max_iter: int = 50
    backtrack: float = 0.5
    max_halvings: int = 20
    continuation: Optional[Sequence[float]] = None
    auto_continuation: bool = True
    continuation_step: float = 0.5
    intermediate_tol: float = 1e-6
    linear_tol: float = 1e-10
    jacobian_eps: float = 1e-10

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("at least one iteration is required")

    def exponents(self, p: float) -> list[float]:
        """Continuation path ending at ``p``."""
        if self.continuation is not None:
            path = [float(q) for q in self.continuation]
            if not path or path[-1] != p:
                path.append(p)
            return path
        if not self.auto_continuation or p <= 3:
            return [p]
        n = int(np.ceil((p - 2) / self.continuation_step))
        return list(np.linspace(2.0, p, n + 1))


@dataclass
class NewtonResult:
    U: FEFunction
    iterations: int
    history: list = field(default_factory=list)


# ----------------------------------------------------------------------
# linear algebra


def cg(A, b, tol: float = 1e-10, x0=None, maxiter: Optional[int] = None, precondition=True):
    """Jacobi-preconditioned conjugate gradients.

    Stops when ``||b - A x|| <= tol * ||b||``. Returns ``(x, iterations)``.
    Raises :class:`SolverError` on non-positive curvature.
    """
    n = len(b)
    maxiter = maxiter or max(10 * n, 100)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), 0
    dinv = 1.0 / A.diagonal() if precondition else np.ones(n)
    if np.any(~np.isfinite(dinv)) or np.any(dinv <= 0):
        raise SolverError("matrix diagonal must be positive")
    r = b - A @ x
    z = dinv * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0:
            raise SolverError("indefinite matrix: non-positive curvature in CG")
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return x, it
        z = dinv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(f"CG did not converge in {maxiter} iterations")


def linear_solve(A, b, tol: float = 1e-10, x0=None, method: str = "auto") -> np.ndarray:
    """Solve an SPD system; dense Cholesky below :data:`DIRECT_SOLVE_LIMIT` unknowns."""
    n = len(b)
    if n == 0:
        return np.zeros(0)
    if method == "direct" or (method == "auto" and n < DIRECT_SOLVE_LIMIT):
        dense = A.toarray() if sp.issparse(A) else np.asarray(A)
        try:
            return sla.cho_solve(sla.cho_factor(dense), b)
        except sla.LinAlgError as exc:
            raise SolverError("matrix is not positive definite") from exc
    return cg(A, b, tol=tol, x0=x0)[0]


# ----------------------------------------------------------------------
# assembly


def _volume_state(space: FunctionSpace, U: FEFunction, degree: Optional[int]):
    rule, x, dx, phi, dphi = space.volume_data(degree)
    cells = np.arange(space.mesh.n_triangles)
    local = U.nodal[space.dofmap]
    v = local @ phi.T
    g = np.matmul(local[:, None, None, :], dphi)[:, :, 0, :]
    return x, dx, cells[:, None], phi, dphi, v, g


def assemble_residual(space: FunctionSpace, model: LagrangianModel, U: FEFunction, degree=None):
    """``R_i = int dL/dg . grad V_i + dL/du V_i`` for every free basis function."""
    x, dx, cells, phi, dphi, v, g = _volume_state(space, U, degree)
    d = model.derivatives(x, v, g, cells)
    flux = dx[..., None] * d.dL_dg
    local = np.matmul(dphi, flux[..., None])[..., 0].sum(axis=1)
    local += (dx * d.dL_du) @ phi
    return space.scatter_vector(local)


def assemble_jacobian(space: FunctionSpace, model: LagrangianModel, U: FEFunction, degree=None, eps: float = 0.0):
    """Derivative of :func:`assemble_residual` with respect to the free coefficients."""
    x, dx, cells, phi, dphi, v, g = _volume_state(space, U, degree)
    d = model.regularized(eps).derivatives(x, v, g, cells)
    K = dx[..., None, None] * d.d2L_dgdg
    local = np.matmul(np.matmul(dphi, K), dphi.transpose(0, 1, 3, 2)).sum(axis=1)
    if np.any(d.d2L_dgdu):
        cross = np.einsum("tq,tqai,tqi,qb->tab", dx, dphi, d.d2L_dgdu, phi)
        local += cross + cross.transpose(0, 2, 1)
    if np.any(d.d2L_du2):
        local += np.einsum("tq,tq,qa,qb->tab", dx, d.d2L_du2, phi, phi)
    return space.scatter_matrix(local)


def energy(space: FunctionSpace, model: LagrangianModel, U: FEFunction, degree=None) -> float:
    """Action ``int L(x, U, grad U)``."""
    x, dx, cells, _, _, v, g = _volume_state(space, U, degree)
    return float(np.sum(dx * model.energy_density(x, v, g, cells)))


# ----------------------------------------------------------------------
# Newton


def _newton(space, model, U, tol, cfg, history, stage_p):
    R = assemble_residual(space, model, U)
    rnorm = np.linalg.norm(R)
    history.append((stage_p, 0, rnorm, 1.0))
    it = 0
    while rnorm > tol:
        if it >= cfg.max_iter:
            raise NonConvergenceError(
                f"Newton did not converge in {cfg.max_iter} iterations (|R| = {rnorm:.3e})",
                history,
            )
        it += 1
        J = assemble_jacobian(space, model, U, eps=cfg.jacobian_eps)
        delta = linear_solve(J, -R, tol=cfg.linear_tol)
        lam = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = U.with_coefficients(U.coefficients + lam * delta)
            Rt = assemble_residual(space, model, trial)
            tnorm = np.linalg.norm(Rt)
            if tnorm < rnorm:
                break
            lam *= cfg.backtrack
        else:
            if tnorm >= rnorm:
                raise NonConvergenceError(
                    f"line search failed to reduce the residual (|R| = {rnorm:.3e})", history
                )
        U, R, rnorm = trial, Rt, tnorm
        history.append((stage_p, it, rnorm, lam))
        log.debug("p=%g it=%d |R|=%.3e lambda=%g", stage_p, it, rnorm, lam)
    return U, it


def newton_solve(
    space: FunctionSpace,
    model: LagrangianModel,
    config: Optional[NewtonConfig] = None,
    U0: Optional[FEFunction] = None,
) -> NewtonResult:
    """Damped Newton iteration for the discrete Euler-Lagrange equations.

    For p-Laplacians with ``p > 3`` the exponent is raised gradually from 2,
    each stage warm-started from the previous one.
    """
    cfg = config or NewtonConfig()
    U = U0 if U0 is not None else space.zero()
    history: list = []
    total = 0
    if isinstance(model, PLaplacian):
        path = cfg.exponents(model.p)
        for q in path[:-1]:
            stage = replace(model, p=q)
            U, it = _newton(space, stage, U, max(cfg.tol, cfg.intermediate_tol), cfg, history, q)
            total += it
    U, it = _newton(space, model, U, cfg.tol, cfg, history, getattr(model, "p", None))
    total += it
    return NewtonResult(U, total, history)
