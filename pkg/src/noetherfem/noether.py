"""Symmetries, Noether fluxes and their discrete counterparts.

For a Lagrangian ``L(x, u, grad u)`` and a symmetry with infinitesimals
``xi`` (independent variables) and ``phi`` (dependent variable), the
characteristic is ``Q = phi - xi . grad u`` and the flux is

    C = L xi + (dL/dg) Q.

Smooth fields satisfy ``div C = NOETHER_SIGN * Q * EL[u]`` pointwise, with
``EL[u] = -div dL/dg + dL/du``. On a mesh, the same integrals split into
element volumes and a skeleton of interior edges. Jumps of a vector ``P``
across an edge are ``[[P]] = P1 . n1 + P2 . n2`` and jumps of a scalar
``s`` are the vector ``[[s]] = s1 n1 + s2 n2``. Averages are arithmetic
means of the two traces.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .fespace import FEFunction, FunctionSpace, l2_project
from .lagrangian import LagrangianModel, divergence_of_flux, total_gradient
from .mesh import Mesh
from .quadrature import face_degree, triangle_rule, volume_degree

#: ``div C = NOETHER_SIGN * Q * EL[u]`` for every symmetry and Lagrangian.
NOETHER_SIGN = -1.0

#: Sign of the ``[[L]] . {xi}`` skeleton term. With ``-1`` the discrete
#: quantity is an exact consequence of the divergence theorem.
JUMP_SIGN = -1.0

#: Sign of the ``(dL/dg . grad u) div xi`` volume term.
DIV_XI_SIGN = -1.0


# ----------------------------------------------------------------------
# symmetries


class Symmetry:
    """Infinitesimal generators ``(xi, phi)`` of a one-parameter group.

    Subclasses override the generators and their derivatives. All methods
    take ``x`` of shape ``(..., 2)`` and ``u`` of shape ``(...)``.
    """

    name = "symmetry"
    depends_on_u = False

    def xi(self, x, u):
        return np.zeros(np.shape(x))

    def xi_jac(self, x, u):
        """``[..., i, j] = d xi_i / d x_j``."""
        return np.zeros(np.shape(x) + (2,))

    def xi_u(self, x, u):
        return np.zeros(np.shape(x))

    def phi(self, x, u):
        return np.zeros(np.shape(x)[:-1])

    def phi_grad(self, x, u):
        return np.zeros(np.shape(x))

    def phi_u(self, x, u):
        return np.zeros(np.shape(x)[:-1])

    def div_xi(self, x, u, g=None):
        """Total divergence of ``x -> xi(x, u(x))``; ``g`` is ``grad u``."""
        d = np.trace(self.xi_jac(x, u), axis1=-2, axis2=-1)
        if self.depends_on_u and g is not None:
            d = d + np.einsum("...i,...i->...", self.xi_u(x, u), g)
        return d

    def __repr__(self):
        return f"{type(self).__name__}()"


class RotationSymmetry(Symmetry):
    """Rotations about the origin: ``xi = (-x2, x1)``, ``phi = 0``."""

    name = "rotation"

    def xi(self, x, u):
        x = np.asarray(x, dtype=float)
        return np.stack([-x[..., 1], x[..., 0]], axis=-1)

    def xi_jac(self, x, u):
        J = np.zeros(np.shape(x) + (2,))
        J[..., 0, 1] = -1.0
        J[..., 1, 0] = 1.0
        return J


class TranslationUSymmetry(Symmetry):
    """Shifts of the dependent variable: ``xi = 0``, ``phi = 1``."""

    name = "translation-u"

    def phi(self, x, u):
        return np.ones(np.shape(x)[:-1])


SYMMETRIES = {"rotation": RotationSymmetry, "translation-u": TranslationUSymmetry}


def symmetry_from_name(name: str) -> Symmetry:
    try:
        return SYMMETRIES[name]()
    except KeyError:
        raise ValueError(f"unknown symmetry {name!r}; choose from {sorted(SYMMETRIES)}") from None


# ----------------------------------------------------------------------
# pointwise quantities


def characteristic(sym: Symmetry, x, u, g) -> np.ndarray:
    """``Q = phi - xi . g``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    return sym.phi(x, u) - np.einsum("...i,...i->...", sym.xi(x, u), g)


def flux_C(model: LagrangianModel, sym: Symmetry, x, u, g, cells=None) -> np.ndarray:
    """Noether flux ``C = L xi + (dL/dg) Q``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    g = np.asarray(g, dtype=float)
    d = model.derivatives(x, u, g, cells)
    Q = characteristic(sym, x, u, g)
    return d.L[..., None] * sym.xi(x, u) + d.dL_dg * Q[..., None]


def flux_C_rotation_laplace(x, u, g, f_val) -> np.ndarray:
    """Closed-form rotation flux for ``L = |g|^2 / 2 - f u``."""
    x = np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    a, b = g[..., 0], g[..., 1]
    fu = np.asarray(f_val, dtype=float) * np.asarray(u, dtype=float)
    c1 = x2 * (a * a - b * b) / 2 - x1 * a * b + x2 * fu
    c2 = x1 * (a * a - b * b) / 2 + x2 * a * b - x1 * fu
    return np.stack([c1, c2], axis=-1)


def flux_divergence(model: LagrangianModel, sym: Symmetry, x, u, g, H, cells=None) -> np.ndarray:
    """Chain-rule divergence of ``C`` along a field with value, gradient, Hessian."""
    x = np.asarray(x, dtype=float)
    d = model.derivatives(x, u, g, cells)
    xi = sym.xi(x, u)
    Dxi = sym.xi_jac(x, u)
    if sym.depends_on_u:
        Dxi = Dxi + sym.xi_u(x, u)[..., :, None] * g[..., None, :]
    Q = characteristic(sym, x, u, g)
    gradQ = (
        sym.phi_grad(x, u)
        + sym.phi_u(x, u)[..., None] * g
        - np.einsum("...ji,...j->...i", Dxi, g)
        - np.einsum("...ij,...j->...i", H, xi)
    )
    gradL = total_gradient(d, g, H)
    return (
        np.einsum("...i,...i->...", gradL, xi)
        + d.L * np.trace(Dxi, axis1=-2, axis2=-1)
        + divergence_of_flux(d, g, H) * Q
        + np.einsum("...i,...i->...", d.dL_dg, gradQ)
    )


@dataclass(frozen=True)
class SmoothField:
    """A twice differentiable field given by callables of ``x`` of shape (..., 2)."""

    value: Callable
    grad: Callable
    hess: Callable

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return (
            np.asarray(self.value(x), dtype=float),
            np.asarray(self.grad(x), dtype=float),
            np.asarray(self.hess(x), dtype=float),
        )


def conservation_residual(model: LagrangianModel, sym: Symmetry, u: SmoothField, x, step: float = 1e-4):
    """``(div C[u], Q EL[u])`` at a point ``x``.

    The divergence uses fourth-order centred differences of :func:`flux_C`;
    ``Q EL[u]`` is evaluated from the model derivatives and the Hessian of
    ``u``. Smooth fields satisfy ``divC == NOETHER_SIGN * QEL``.
    """
    x = np.asarray(x, dtype=float)

    def C_at(y):
        v, g, _ = u(y)
        return flux_C(model, sym, y, v, g)

    div = 0.0
    for j in range(2):
        e = np.zeros(2)
        e[j] = step
        dC = -C_at(x + 2 * e) + 8 * C_at(x + e) - 8 * C_at(x - e) + C_at(x - 2 * e)
        div += dC[j] / (12 * step)
    v, g, H = u(x)
    Q = characteristic(sym, x, v, g)
    el = model.euler_lagrange(x, v, g, H)
    return float(div), float(Q * el)


# ----------------------------------------------------------------------
# field evaluation on meshes


def _as_field_evaluator(u, mesh: Mesh, piece_of_cell: np.ndarray):
    """Return ``ev(cells, ref, x) -> (v, g, H)`` for ``u``.

    ``u`` may be an :class:`FEFunction` on ``mesh``, a single
    :class:`SmoothField`, or a sequence of smooth fields, one per piece.
    """
    if isinstance(u, FEFunction):
        if u.space.mesh is not mesh:
            raise ValueError("the finite element function lives on a different mesh")

        def ev(cells, ref, x):
            return u.evaluate(cells, ref)

        return ev
    fields = [u] if isinstance(u, SmoothField) else list(u)

    def ev(cells, ref, x):
        pieces = piece_of_cell[cells] if len(fields) > 1 else np.zeros(len(cells), dtype=int)
        v = np.zeros(x.shape[:-1])
        g = np.zeros(x.shape)
        H = np.zeros(x.shape + (2,))
        for i, fld in enumerate(fields):
            sel = pieces == i
            if np.any(sel):
                v[sel], g[sel], H[sel] = fld(x[sel])
        return v, g, H

    return ev


def _noether_functional(
    mesh: Mesh,
    piece_of_cell: np.ndarray,
    evaluate: Callable,
    model: LagrangianModel,
    sym: Symmetry,
    phi_field: Optional[FEFunction],
    vol_degree: int,
    edge_degree: int,
    jump_sign: float,
    div_sign: float,
    space: FunctionSpace,
) -> tuple[float, float]:
    """Volume and interface parts of the piecewise conservation functional.

    ``phi_field`` replaces ``phi`` by a finite element function when given.
    Interfaces are the interior edges between different pieces.
    """
    nt = mesh.n_triangles
    cells = np.arange(nt)
    rule = triangle_rule(vol_degree)
    x = space.map_to_physical(cells, rule.ref_points)
    dx = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    v, g, H = evaluate(cells, rule.ref_points, x)
    c = cells[:, None]
    d = model.derivatives(x, v, g, c)
    if phi_field is not None:
        phi = phi_field.evaluate(cells, rule.ref_points, 0)[0]
    else:
        phi = sym.phi(x, v)
    xi = sym.xi(x, v)
    divxi = sym.div_xi(x, v, g)
    el = -divergence_of_flux(d, g, H) + d.dL_du
    gradL = total_gradient(d, g, H)
    integrand = (
        el * phi
        + np.einsum("...i,...i->...", gradL, xi)
        + d.L * divxi
        + div_sign * np.einsum("...i,...i->...", d.dL_dg, g) * divxi
    )
    volume = float(np.sum(dx * integrand))

    ie = mesh.interior_edges
    et = mesh.edge_triangles[ie]
    ie = ie[piece_of_cell[et[:, 0]] != piece_of_cell[et[:, 1]]]
    if len(ie) == 0:
        return volume, 0.0
    xe, ds, sides = space.edge_quadrature(ie, edge_degree)
    normals = mesh.edge_normals[ie]
    jump_sigma = np.zeros(xe.shape[:-1])
    jump_L = np.zeros(xe.shape)
    phi_avg = np.zeros(xe.shape[:-1])
    xi_avg = np.zeros(xe.shape)
    for s, (sc, sref) in enumerate(sides):
        vs, gs, Hs = evaluate(sc, sref, xe)
        ds_ = model.derivatives(xe, vs, gs, sc[:, None])
        n = normals[:, s][:, None, :]
        jump_sigma += np.einsum("...i,...i->...", ds_.dL_dg, n)
        jump_L += ds_.L[..., None] * n
        if phi_field is not None:
            phi_avg += 0.5 * phi_field.evaluate(sc, sref, 0)[0]
        else:
            phi_avg += 0.5 * sym.phi(xe, vs)
        xi_avg += 0.5 * sym.xi(xe, vs)
    integrand = jump_sigma * phi_avg + jump_sign * np.einsum("...i,...i->...", jump_L, xi_avg)
    return volume, float(np.sum(ds * integrand))


def _projected_phi(space: FunctionSpace, sym: Symmetry, U: FEFunction) -> Optional[FEFunction]:
    """L2 projection of ``x -> phi(x, U(x))`` onto the zero-trace space."""
    if isinstance(sym, RotationSymmetry):
        return None  # phi vanishes identically
    if isinstance(sym, TranslationUSymmetry):
        return l2_project(space, lambda x: np.ones(x.shape[:-1]))
    if sym.depends_on_u:
        raise NotImplementedError("projection of a u-dependent phi is not implemented")
    return l2_project(space, lambda x: sym.phi(x, np.zeros(x.shape[:-1])))


def discrete_noether(
    space: FunctionSpace,
    model: LagrangianModel,
    sym: Symmetry,
    U: FEFunction,
    *,
    jump_sign: float = JUMP_SIGN,
    div_sign: float = DIV_XI_SIGN,
    degree: Optional[int] = None,
    edge_degree: Optional[int] = None,
) -> float:
    """Discrete Noether quantity ``N[U]``.

    Element terms ``(-div_K dL/dg + dL/du) P phi + grad_K L . xi + L div xi
    - (dL/dg . grad U) div xi`` plus interior-edge terms
    ``[[dL/dg]] {P phi} - [[L]] . {xi}``, where ``P`` is the L2 projection
    onto the zero-trace space and ``grad_K L`` is the elementwise total
    gradient of ``x -> L(x, U(x), grad U(x))``. It vanishes at the discrete
    minimiser for symmetries whose ``xi`` is tangent to the boundary.
    """
    mesh = space.mesh
    k = space.degree
    pphi = _projected_phi(space, sym, U)
    vol, skel = _noether_functional(
        mesh,
        np.arange(mesh.n_triangles),
        _as_field_evaluator(U, mesh, None),
        model,
        sym,
        pphi if pphi is not None else space.zero(),
        degree or volume_degree(k),
        edge_degree or face_degree(k),
        jump_sign,
        div_sign,
        space,
    )
    return vol + skel


def weak_law_residual(
    mesh: Mesh,
    decomposition: Sequence[Sequence[int]],
    model: LagrangianModel,
    sym: Symmetry,
    u: Union[FEFunction, SmoothField, Sequence[SmoothField]],
    *,
    projected: bool = False,
    degree: Optional[int] = None,
    edge_degree: Optional[int] = None,
    jump_sign: float = JUMP_SIGN,
    div_sign: float = DIV_XI_SIGN,
) -> float:
    """Piecewise conservation functional of a broken field.

    Sums ``(-div dL/du_g + dL/du) phi + grad L . xi + L div xi
    - (dL/dg . grad u) div xi`` over the pieces plus
    ``[[dL/dg]] {phi} - [[L]] . {xi}`` over the interfaces between pieces.
    Outer boundary terms are not included. With one piece and a smooth
    minimiser the value vanishes; with pieces equal to the triangles and
    ``projected=True`` it coincides with :func:`discrete_noether`.

    Parameters
    ----------
    mesh : Mesh
        Triangulation resolving the pieces.
    decomposition : sequence of index arrays
        Triangles of each piece; together they must cover the mesh once.
    u : FEFunction, SmoothField or sequence of SmoothField
        A sequence supplies one smooth field per piece.
    projected : bool
        Replace ``phi`` by its L2 projection (finite element ``u`` only).
    """
    nt = mesh.n_triangles
    piece_of_cell = np.full(nt, -1, dtype=np.int64)
    for i, tris in enumerate(decomposition):
        tris = np.asarray(tris, dtype=np.int64)
        if np.any(piece_of_cell[tris] >= 0):
            raise ValueError("pieces overlap")
        piece_of_cell[tris] = i
    if np.any(piece_of_cell < 0):
        raise ValueError("pieces do not cover the mesh")
    if not isinstance(u, (FEFunction, SmoothField)) and len(u) != len(decomposition):
        raise ValueError("need one smooth field per piece")

    if isinstance(u, FEFunction):
        space = u.space
        k = space.degree
    else:
        space = FunctionSpace(mesh, 1)
        k = 2
    pphi = None
    if projected:
        if not isinstance(u, FEFunction):
            raise ValueError("projection needs a finite element field")
        pphi = _projected_phi(space, sym, u)
        if pphi is None:
            pphi = space.zero()
    vol, skel = _noether_functional(
        mesh,
        piece_of_cell,
        _as_field_evaluator(u, mesh, piece_of_cell),
        model,
        sym,
        pphi,
        degree or volume_degree(k),
        edge_degree or face_degree(k),
        jump_sign,
        div_sign,
        space,
    )
    return vol + skel


# ----------------------------------------------------------------------
# estimator


@dataclass
class NoetherReport:
    """Discrete Noether quantity and the estimator with its indicators.

    ``element_indicators`` are ``||div_K C[U]||_{L2(K)}`` and
    ``edge_indicators`` are ``||[[C[U]]]||_{L2(e)}`` on the interior edges
    listed in ``edges``. ``E_total`` combines them according to ``form``.
    """

    N_value: float
    element_indicators: np.ndarray
    edge_indicators: np.ndarray
    E_total: float
    edges: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    form: str = "l2"

    def to_json(self) -> str:
        return json.dumps(
            {
                "N": self.N_value,
                "E": self.E_total,
                "elements": self.element_indicators.tolist(),
                "edges": self.edge_indicators.tolist(),
            }
        )

    def cell_indicators(self, mesh: Mesh) -> np.ndarray:
        """Per-triangle indicators with edge contributions split evenly.

        With ``form="l2"`` squared indicators are distributed, so that the
        per-triangle values again combine in the same norm.
        """
        power = 2.0 if self.form == "l2" else 1.0
        eta = self.element_indicators**power
        tris = mesh.edge_triangles[self.edges]
        share = 0.5 * self.edge_indicators**power
        eta = eta + np.bincount(tris[:, 0], share, minlength=len(eta))
        eta = eta + np.bincount(tris[:, 1], share, minlength=len(eta))
        return eta ** (1.0 / power)


def combine_indicators(element: np.ndarray, edge: np.ndarray, form: str = "l2") -> float:
    """Estimator value from local indicators.

    ``"sum"`` adds the local norms; ``"l2"`` adds the broken norms
    ``||div_K C||_{L2(Omega)} + ||[[C]]||_{L2(skeleton)}``.
    """
    if form == "sum":
        return float(np.sum(element) + np.sum(edge))
    if form == "l2":
        return float(np.sqrt(np.sum(element**2)) + np.sqrt(np.sum(edge**2)))
    raise ValueError(f"unknown estimator form {form!r}")


def estimator(
    space: FunctionSpace,
    model: LagrangianModel,
    sym: Symmetry,
    U: FEFunction,
    *,
    form: str = "l2",
    with_noether: bool = True,
    degree: Optional[int] = None,
    edge_degree: Optional[int] = None,
) -> NoetherReport:
    """Local conservation indicators and the estimator ``E(U, f)``."""
    mesh = space.mesh
    k = space.degree
    cells = np.arange(mesh.n_triangles)
    rule = triangle_rule(degree or volume_degree(k))
    x = space.map_to_physical(cells, rule.ref_points)
    dx = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    v, g, H = U.evaluate(cells, rule.ref_points)
    divC = flux_divergence(model, sym, x, v, g, H, cells[:, None])
    element = np.sqrt(np.sum(dx * divC**2, axis=1))

    ie = mesh.interior_edges
    if len(ie):
        xe, ds, sides = space.edge_quadrature(ie, edge_degree or face_degree(k))
        normals = mesh.edge_normals[ie]
        jump = np.zeros(xe.shape[:-1])
        for s, (sc, sref) in enumerate(sides):
            vs, gs = U.evaluate(sc, sref, 1)
            C = flux_C(model, sym, xe, vs, gs, sc[:, None])
            jump += np.einsum("...i,...i->...", C, normals[:, s][:, None, :])
        edge = np.sqrt(np.sum(ds * jump**2, axis=1))
    else:
        edge = np.zeros(0)
    N = discrete_noether(space, model, sym, U) if with_noether else float("nan")
    return NoetherReport(N, element, edge, combine_indicators(element, edge, form), ie, form)


# ----------------------------------------------------------------------
# identities


def jump_identity(space: FunctionSpace, P: Callable, V: FEFunction, degree: Optional[int] = None):
    """Both sides of ``sum_K int_dK P.n_K V = int_E [[P]] {V} + int_dOmega P.n V``.

    ``P(x, cells)`` is a broken vector field evaluated with the cell index
    of every point. Returns ``(lhs, rhs)``.
    """
    mesh = space.mesh
    deg = degree or face_degree(space.degree) + 2
    all_edges = np.arange(mesh.n_edges)
    xe, ds, sides = space.edge_quadrature(all_edges, deg)
    normals = mesh.edge_normals
    lhs = 0.0
    jump = np.zeros(xe.shape[:-1])
    vavg = np.zeros(xe.shape[:-1])
    nsides = np.zeros(mesh.n_edges)
    for s, (sc, sref) in enumerate(sides):
        ok = sc >= 0
        Ps = P(xe[ok], sc[ok][:, None])
        Vs = V.evaluate(sc[ok], sref[ok], 0)[0]
        flux = np.einsum("...i,...i->...", Ps, normals[ok, s][:, None, :])
        lhs += float(np.sum(ds[ok] * flux * Vs))
        jump[ok] += flux
        vavg[ok] += Vs
        nsides[ok] += 1
    vavg /= nsides[:, None]
    interior = ~mesh.is_boundary_edge
    rhs_interior = float(np.sum((ds * jump * vavg)[interior]))
    rhs_boundary = float(np.sum((ds * jump * vavg)[~interior]))
    return lhs, rhs_interior + rhs_boundary
