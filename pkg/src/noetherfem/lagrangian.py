"""First-order Lagrangians ``L(x, u, g)`` with ``g`` standing for the gradient.

All evaluators are vectorised: ``x`` and ``g`` have shape ``(..., 2)`` and
``u`` shape ``(...)``. Sources may be evaluated in a cell-aware way, which
lets a piecewise polynomial source (one stored as a finite element
function) take part in the same formulas as a smooth one.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np


class SingularStateError(ValueError):
    """The Lagrangian is not differentiable at the requested state."""


# ----------------------------------------------------------------------
# sources


class Source(abc.ABC):
    """Scalar field ``f(x)`` with gradient."""

    @abc.abstractmethod
    def value(self, x: np.ndarray, cells: Optional[np.ndarray] = None) -> np.ndarray: ...

    @abc.abstractmethod
    def gradient(self, x: np.ndarray, cells: Optional[np.ndarray] = None) -> np.ndarray: ...


class SmoothSource(Source):
    """Source given by closed-form callables."""

    def __init__(self, f: Callable, grad: Optional[Callable] = None):
        self.f = f
        self.grad = grad

    def value(self, x, cells=None):
        return np.broadcast_to(np.asarray(self.f(x), dtype=float), x.shape[:-1])

    def gradient(self, x, cells=None):
        if self.grad is None:
            raise NotImplementedError("this source has no gradient")
        return np.broadcast_to(np.asarray(self.grad(x), dtype=float), x.shape)


class ZeroSource(SmoothSource):
    def __init__(self):
        super().__init__(lambda x: np.zeros(x.shape[:-1]), lambda x: np.zeros(x.shape))


class InterpolatedSource(Source):
    """Continuous piecewise polynomial interpolant of a source.

    Evaluation needs the cell containing each point; for points on a cell
    boundary the value is the trace from that cell.
    """

    def __init__(self, space, f: Callable):
        from .fespace import FunctionSpace

        if space.dirichlet:
            space = FunctionSpace(space.mesh, space.degree, dirichlet=False)
        self.space = space
        self.nodal = np.asarray(f(space.node_coords), dtype=float)
        self._memo = {}

    def _eval(self, x, cells, derivatives):
        if cells is None:
            raise ValueError("an interpolated source needs the cells of its points")
        # assembly loops query the same quadrature points many times
        key = (x.shape, hash(x.tobytes()), hash(np.asarray(cells).tobytes()), derivatives)
        hit = self._memo.get(key)
        if hit is None:
            if len(self._memo) > 8:
                self._memo.clear()
            hit = self._eval_uncached(x, cells, derivatives)
            self._memo[key] = hit
        return hit

    def _eval_uncached(self, x, cells, derivatives):
        cells = np.broadcast_to(np.asarray(cells), x.shape[:-1])
        flat_c = cells.reshape(-1)
        flat_x = x.reshape(-1, 2)
        ref = self.space.map_to_reference(flat_c, flat_x)
        out = self.space.evaluate(self.nodal, flat_c, ref[:, None, :], derivatives)
        return out

    def value(self, x, cells=None):
        return self._eval(x, cells, 0)[0][:, 0].reshape(x.shape[:-1])

    def gradient(self, x, cells=None):
        return self._eval(x, cells, 1)[1][:, 0].reshape(x.shape)


def as_source(f) -> Source:
    if f is None:
        return ZeroSource()
    if isinstance(f, Source):
        return f
    return SmoothSource(f)


# ----------------------------------------------------------------------
# models


@dataclass
class Derivatives:
    """Pointwise values of a Lagrangian and its partial derivatives."""

    L: np.ndarray
    dL_du: np.ndarray
    dL_dg: np.ndarray
    dL_dx: np.ndarray  # explicit x-derivative, u and g held fixed
    d2L_dgdg: np.ndarray
    d2L_dgdu: np.ndarray
    d2L_dgdx: np.ndarray  # [..., i, j] = d^2 L / dg_i dx_j
    d2L_du2: np.ndarray
    d2L_dudx: np.ndarray


class LagrangianModel(abc.ABC):
    """Interface for a Lagrangian ``L(x, u, grad u)``."""

    @abc.abstractmethod
    def derivatives(self, x, u, g, cells=None) -> Derivatives: ...

    def regularized(self, eps: float) -> "LagrangianModel":
        """Copy used for Jacobians near degenerate states; identity by default."""
        return self

    def energy_density(self, x, u, g, cells=None):
        return self.derivatives(x, u, g, cells).L

    def euler_lagrange(self, x, u, g, H, cells=None):
        """Strong residual ``-div dL/dg + dL/du`` for a field with Hessian ``H``."""
        d = self.derivatives(x, u, g, cells)
        div = divergence_of_flux(d, g, H)
        return -div + d.dL_du


def divergence_of_flux(d: Derivatives, g, H):
    """Total divergence of ``x -> dL/dg(x, u(x), grad u(x))``."""
    return (
        np.trace(d.d2L_dgdx, axis1=-2, axis2=-1)
        + np.einsum("...i,...i->...", d.d2L_dgdu, g)
        + np.einsum("...ij,...ji->...", d.d2L_dgdg, H)
    )


def total_gradient(d: Derivatives, g, H):
    """Total x-gradient of ``x -> L(x, u(x), grad u(x))``."""
    return d.dL_dx + d.dL_du[..., None] * g + np.einsum("...ji,...j->...i", H, d.dL_dg)


@dataclass(frozen=True)
class PLaplacian(LagrangianModel):
    """``L = (|g|^2 + eps)^(p/2) / p - f(x) u``.

    With ``eps = 0`` this is the p-Dirichlet energy with a load term.
    """

    p: float
    source: Source = None
    eps: float = 0.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        object.__setattr__(self, "source", as_source(self.source))

    def regularized(self, eps: float) -> "PLaplacian":
        return replace(self, eps=max(self.eps, eps))

    def _powers(self, g):
        p, eps = self.p, self.eps
        s = np.einsum("...i,...i->...", g, g) + eps
        if eps == 0 and p < 2 and np.any(s == 0):
            raise SingularStateError("p < 2 Lagrangian is singular at zero gradient")
        with np.errstate(divide="ignore", invalid="ignore"):
            a = np.where(s > 0, s ** ((p - 2) / 2), 1.0 if p == 2 else 0.0)
            b = np.where(s > 0, (p - 2) * s ** ((p - 4) / 2), 0.0)
        return s, a, b

    def derivatives(self, x, u, g, cells=None) -> Derivatives:
        x = np.asarray(x, dtype=float)
        g = np.asarray(g, dtype=float)
        u = np.asarray(u, dtype=float)
        s, a, b = self._powers(g)
        f = self.source.value(x, cells)
        try:
            gf = self.source.gradient(x, cells)
        except NotImplementedError:
            gf = np.full(x.shape, np.nan)
        shape = np.broadcast_shapes(x.shape[:-1], u.shape, g.shape[:-1])
        eye = np.broadcast_to(np.eye(2), shape + (2, 2))
        zero2 = np.zeros(shape + (2,))
        return Derivatives(
            L=s ** (self.p / 2) / self.p - f * u,
            dL_du=np.broadcast_to(-f, shape),
            dL_dg=a[..., None] * g,
            dL_dx=-u[..., None] * gf,
            d2L_dgdg=a[..., None, None] * eye + b[..., None, None] * g[..., :, None] * g[..., None, :],
            d2L_dgdu=zero2,
            d2L_dgdx=np.zeros(shape + (2, 2)),
            d2L_du2=np.zeros(shape),
            d2L_dudx=-np.broadcast_to(gf, shape + (2,)),
        )


def derivatives(model: LagrangianModel, x, u, g, cells=None):
    """``(L, dL/du, dL/dg, dL/dx explicit, d2L/dg dg)`` at one or many states."""
    d = model.derivatives(x, u, g, cells)
    return d.L, d.dL_du, d.dL_dg, d.dL_dx, d.d2L_dgdg


def total_gradient_L(model: LagrangianModel, U, cell: int, bary):
    """Total gradient of ``L(x, U(x), grad U(x))`` inside ``cell``."""
    bary = np.asarray(bary, dtype=float)
    v, g, H = U.eval(cell, bary)
    x = U.space.map_to_physical(np.array([cell]), bary[None, 1:3])[0, 0]
    d = model.derivatives(x, np.asarray(v), g, np.asarray(cell))
    return total_gradient(d, g, H)


# ----------------------------------------------------------------------
# benchmark data


def benchmark_u(x):
    """``sin(pi |x|^2)``."""
    s = np.einsum("...i,...i->...", x, x)
    return np.sin(np.pi * s)


def benchmark_grad_u(x):
    s = np.einsum("...i,...i->...", x, x)
    return (2 * np.pi * np.cos(np.pi * s))[..., None] * x


def benchmark_hess_u(x):
    s = np.einsum("...i,...i->...", x, x)
    c, sn = np.cos(np.pi * s), np.sin(np.pi * s)
    eye = np.eye(2)
    return (2 * np.pi * c)[..., None, None] * eye - (4 * np.pi**2 * sn)[..., None, None] * (
        x[..., :, None] * x[..., None, :]
    )


def manufactured_f(p: float, x) -> np.ndarray:
    """Source making ``sin(pi |x|^2)`` solve ``-div(|grad u|^(p-2) grad u) = f``.

    With ``s = |x|^2`` and ``c = cos(pi s)`` the flux is ``w(s) x`` for
    ``w = (2 pi)^(p-1) |c|^(p-2) c s^((p-2)/2)``, and ``f = -(2 w + 2 s w')``.
    For ``p < 2`` the source is unbounded at the origin (returned as inf).
    """
    x = np.asarray(x, dtype=float)
    s = np.einsum("...i,...i->...", x, x)
    c, sn = np.cos(np.pi * s), np.sin(np.pi * s)
    A = (2 * np.pi) ** (p - 1)
    B = 2 * np.pi * (p - 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ac = np.abs(c) ** (p - 2) if p != 2 else np.ones_like(c)
        sq = s ** ((p - 2) / 2) if p != 2 else np.ones_like(s)
        out = -A * ac * sq * (p * c - B * s * sn)
    return out


def manufactured_grad_f(p: float, x) -> np.ndarray:
    """Gradient ``2 f'(s) x`` of :func:`manufactured_f` (zero at the origin for p > 3)."""
    x = np.asarray(x, dtype=float)
    s = np.einsum("...i,...i->...", x, x)
    c, sn = np.cos(np.pi * s), np.sin(np.pi * s)
    A = (2 * np.pi) ** (p - 1)
    B = 2 * np.pi * (p - 1)
    q = (p - 2) / 2
    h = p * c - B * s * sn
    dh = -p * np.pi * sn - B * sn - B * np.pi * s * c
    with np.errstate(divide="ignore", invalid="ignore"):
        g1 = np.abs(c) ** (p - 2) if p != 2 else np.ones_like(c)
        if p == 2:
            dg1 = np.zeros_like(c)
        else:
            dg1 = -(p - 2) * np.pi * np.sign(c) * np.abs(c) ** (p - 3) * sn
        sq = s**q if p != 2 else np.ones_like(s)
        # s^q * x and s^(q-1) * x stay bounded at the origin for p >= 3
        dsq_x = np.where(s > 0, q * s ** (q - 1), 0.0)[..., None] * x if p != 2 else 0.0 * x
    fp_x = -A * ((dg1 * sq * h + g1 * sq * dh)[..., None] * x + (g1 * h)[..., None] * dsq_x)
    return 2 * fp_x


def benchmark_source(p: float) -> SmoothSource:
    return SmoothSource(lambda x: manufactured_f(p, x), lambda x: manufactured_grad_f(p, x))


def gaussian_u(x):
    """``exp(-10 |x|^2)``."""
    return np.exp(-10 * np.einsum("...i,...i->...", x, x))


def gaussian_grad_u(x):
    return (-20 * gaussian_u(x))[..., None] * x


def gaussian_f(x):
    """``-Laplace exp(-10 |x|^2) = (40 - 400 |x|^2) exp(-10 |x|^2)``."""
    s = np.einsum("...i,...i->...", x, x)
    return (40 - 400 * s) * np.exp(-10 * s)


def gaussian_grad_f(x):
    s = np.einsum("...i,...i->...", x, x)
    # d/ds of (40 - 400 s) e^{-10 s} is (-800 + 4000 s) e^{-10 s}; chain rule gives 2x
    return (2 * (-800 + 4000 * s) * np.exp(-10 * s))[..., None] * x


def gaussian_source() -> SmoothSource:
    return SmoothSource(gaussian_f, gaussian_grad_f)
