"""Continuous Lagrange P_k spaces (k = 1, 2, 3) on triangulations.

Nodes are the vertices, ``k - 1`` equispaced points per edge and, for
``k = 3``, the centroid. Global numbering puts vertices first, then edge
nodes ordered from the lower to the higher vertex index of each edge, then
interior nodes. With ``dirichlet=True`` the nodes on the boundary are
constrained and eliminated from the unknowns.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import edge_rule, error_degree, face_degree, triangle_rule, volume_degree

# ----------------------------------------------------------------------
# reference element


def _monomials(k: int):
    return [(a, d - a) for d in range(k + 1) for a in range(d, -1, -1)]


def reference_nodes(k: int) -> np.ndarray:
    """Reference coordinates of the local Lagrange nodes, shape (nloc, 2)."""
    V = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [V[0], V[1], V[2]]
    for e in range(3):
        a, b = V[(e + 1) % 3], V[(e + 2) % 3]
        for j in range(1, k):
            nodes.append(a + (j / k) * (b - a))
    if k == 3:
        nodes.append(V.mean(axis=0))
    return np.array(nodes)


class ReferenceElement:
    """Lagrange basis on the reference triangle expanded in monomials."""

    def __init__(self, k: int):
        if k not in (1, 2, 3):
            raise ValueError("degree must be 1, 2 or 3")
        self.k = k
        self.nodes = reference_nodes(k)
        self.exponents = np.array(_monomials(k))
        vander = self._monomial_values(self.nodes)
        # basis_i = sum_m coeffs[m, i] * monomial_m
        self.coeffs = np.linalg.solve(vander, np.eye(len(self.nodes)))
        self._cache = {}

    @property
    def n_local(self) -> int:
        return len(self.nodes)

    def _monomial_values(self, pts):
        x, y = pts[..., 0, None], pts[..., 1, None]
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        return x**a * y**b

    def tabulate(self, pts: np.ndarray, derivatives: int = 2):
        """Basis values, reference gradients and reference Hessians at ``pts``.

        ``pts`` has shape ``(..., 2)``; outputs have shapes ``(..., nloc)``,
        ``(..., nloc, 2)`` and ``(..., nloc, 2, 2)``.
        """
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 2 and len(pts) <= 64:
            key = (pts.shape, pts.tobytes(), derivatives)
            hit = self._cache.get(key)
            if hit is None:
                hit = self._tabulate(pts, derivatives)
                for a in hit:
                    a.setflags(write=False)
                self._cache[key] = hit
            return hit
        return self._tabulate(pts, derivatives)

    def _tabulate(self, pts, derivatives):
        x, y = pts[..., 0, None], pts[..., 1, None]
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        xp = [np.ones_like(x), x, x * x, x * x * x]
        yp = [np.ones_like(y), y, y * y, y * y * y]

        def pw(base, e):
            table = xp if base is x else yp
            return np.concatenate(
                [table[ei] if ei >= 0 else np.zeros_like(x) for ei in e], axis=-1
            )

        mon = pw(x, a) * pw(y, b)
        out = [mon @ self.coeffs]
        if derivatives >= 1:
            dx = a * pw(x, a - 1) * pw(y, b)
            dy = b * pw(x, a) * pw(y, b - 1)
            out.append(np.stack([dx @ self.coeffs, dy @ self.coeffs], axis=-1))
        if derivatives >= 2:
            dxx = a * (a - 1) * pw(x, a - 2) * pw(y, b)
            dxy = a * b * pw(x, a - 1) * pw(y, b - 1)
            dyy = b * (b - 1) * pw(x, a) * pw(y, b - 2)
            hxx, hxy, hyy = (d @ self.coeffs for d in (dxx, dxy, dyy))
            H = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -1)
            out.append(H)
        return tuple(out)


# ----------------------------------------------------------------------
# spaces


class FunctionSpace:
    """Continuous piecewise P_k space on ``mesh``.

    Parameters
    ----------
    mesh : Mesh
    degree : int
        Polynomial degree 1, 2 or 3.
    dirichlet : bool
        Constrain boundary nodes (zero trace unless a lift is supplied).
    """

    def __init__(self, mesh: Mesh, degree: int = 1, dirichlet: bool = True):
        self.mesh = mesh
        self.degree = degree
        self.dirichlet = dirichlet
        self.ref = ReferenceElement(degree)
        self._build_dofs()

    def __repr__(self):
        return f"FunctionSpace(P{self.degree}, nodes={self.n_nodes}, dim={self.dim})"

    def _build_dofs(self):
        mesh, k = self.mesh, self.degree
        nv, ne, nt = mesh.n_vertices, mesh.n_edges, mesh.n_triangles
        t = mesh.triangles
        cols = [t]
        if k > 1:
            te = mesh.tri_edges
            for e in range(3):
                start = t[:, (e + 1) % 3]
                forward = start == mesh.edges[te[:, e], 0]
                base = nv + (k - 1) * te[:, e]
                for j in range(1, k):
                    pos = np.where(forward, j - 1, k - 1 - j)
                    cols.append((base + pos)[:, None])
        if k == 3:
            cols.append((nv + (k - 1) * ne + np.arange(nt))[:, None])
        self.dofmap = np.hstack(cols).astype(np.int64)
        self.n_nodes = nv + (k - 1) * ne + (nt if k == 3 else 0)

        coords = np.empty((self.n_nodes, 2))
        coords[self.dofmap.ravel()] = self.map_to_physical(
            np.arange(nt), self.ref.nodes
        ).reshape(-1, 2)
        self.node_coords = coords

        bnd = np.zeros(self.n_nodes, dtype=bool)
        be = mesh.boundary_edges
        bnd[mesh.edges[be].ravel()] = True
        if k > 1:
            for j in range(k - 1):
                bnd[nv + (k - 1) * be + j] = True
        self.boundary_mask = bnd
        free = ~bnd if self.dirichlet else np.ones(self.n_nodes, dtype=bool)
        self.free = np.flatnonzero(free)
        self.free_index = np.full(self.n_nodes, -1, dtype=np.int64)
        self.free_index[self.free] = np.arange(len(self.free))

    @property
    def dim(self) -> int:
        """Number of unconstrained degrees of freedom."""
        return len(self.free)

    # geometry -------------------------------------------------------------

    def map_to_physical(self, cells: np.ndarray, ref_pts: np.ndarray) -> np.ndarray:
        """Physical coordinates of reference points on ``cells``.

        ``cells`` has shape ``(M,)``, ``ref_pts`` shape ``(Q, 2)`` or
        ``(M, Q, 2)``; the result has shape ``(M, Q, 2)``.
        """
        p0 = self.mesh.vertices[self.mesh.triangles[cells, 0]]
        J = self.mesh.jacobians[cells]
        if np.ndim(ref_pts) == 2:
            return np.einsum("mij,qj->mqi", J, ref_pts) + p0[:, None, :]
        return np.einsum("mij,mqj->mqi", J, ref_pts) + p0[:, None, :]

    def map_to_reference(self, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
        p0 = self.mesh.vertices[self.mesh.triangles[cells, 0]]
        Jinv = np.linalg.inv(self.mesh.jacobians[cells])
        return np.einsum("...ij,...j->...i", Jinv, x - p0)

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.mesh.jacobians)

    # evaluation -------------------------------------------------------------

    def basis_at(self, cells: np.ndarray, ref_pts: np.ndarray, derivatives: int = 2):
        """Physical basis values/gradients/Hessians on ``cells``.

        ``cells`` has shape ``(M,)`` and ``ref_pts`` shape ``(M, Q, 2)`` or
        ``(Q, 2)``. Returned arrays have shapes ``(M, Q, nloc)`` (or
        ``(Q, nloc)`` for shared points), ``(M, Q, nloc, 2)`` and
        ``(M, Q, nloc, 2, 2)``.
        """
        tab = self.ref.tabulate(ref_pts, derivatives)
        out = [tab[0]]
        G = self.inverse_jacobians[cells]  # grad_x = G^T grad_ref
        if derivatives >= 1:
            d1 = tab[1][None] if tab[1].ndim == 3 else tab[1]
            out.append(np.matmul(d1, G[:, None]))
        if derivatives >= 2:
            sub = "qlab" if tab[2].ndim == 4 else "mqlab"
            out.append(np.einsum(f"mai,{sub},mbj->mqlij", G, tab[2], G))
        return tuple(out)

    def evaluate(self, nodal: np.ndarray, cells, ref_pts, derivatives: int = 2):
        """Values, gradients and Hessians of the nodal field ``nodal``."""
        cells = np.asarray(cells)
        local = nodal[self.dofmap[cells]]  # (M, nloc)
        tab = self.basis_at(cells, ref_pts, derivatives)
        if tab[0].ndim == 2:
            out = [local @ tab[0].T]
        else:
            out = [np.einsum("mql,ml->mq", tab[0], local)]
        if derivatives >= 1:
            out.append(np.matmul(local[:, None, None, :], tab[1])[:, :, 0, :])
        if derivatives >= 2:
            out.append(np.einsum("mqlij,ml->mqij", tab[2], local))
        return tuple(out)

    # construction helpers ---------------------------------------------------

    def zero(self) -> "FEFunction":
        return FEFunction(self, np.zeros(self.dim))

    def function(self, coefficients, lift: Optional[np.ndarray] = None) -> "FEFunction":
        return FEFunction(self, np.asarray(coefficients, dtype=float), lift)

    def interpolate(self, func: Callable, lift: bool = False) -> "FEFunction":
        """Nodal interpolant. Constrained nodes get ``func`` values only if ``lift``."""
        vals = np.asarray(func(self.node_coords), dtype=float)
        coeffs = vals[self.free]
        liftv = None
        if lift and self.dirichlet:
            liftv = np.where(self.boundary_mask, vals, 0.0)
        return FEFunction(self, coeffs, liftv)

    def boundary_lift(self, func: Callable) -> np.ndarray:
        vals = np.asarray(func(self.node_coords), dtype=float)
        return np.where(self.boundary_mask, vals, 0.0)

    # assembly ----------------------------------------------------------------

    def quadrature(self, degree: Optional[int] = None):
        """Quadrature points (physical), weights times |K|*2 and reference points."""
        rule = triangle_rule(degree or volume_degree(self.degree))
        cells = np.arange(self.mesh.n_triangles)
        x = self.map_to_physical(cells, rule.ref_points)
        dx = 2.0 * self.mesh.areas[:, None] * rule.weights[None, :]
        return rule, x, dx

    def volume_data(self, degree: Optional[int] = None):
        """Cached ``(rule, x, dx, phi, dphi)`` for a volume rule on all cells."""
        degree = degree or volume_degree(self.degree)
        cache = self.__dict__.setdefault("_volume_cache", {})
        if degree not in cache:
            rule, x, dx = self.quadrature(degree)
            cells = np.arange(self.mesh.n_triangles)
            phi, dphi = self.basis_at(cells, rule.ref_points, 1)
            for a in (x, dx, dphi):
                a.setflags(write=False)
            cache[degree] = (rule, x, dx, phi, dphi)
        return cache[degree]

    def edge_quadrature(self, edges: np.ndarray, degree: Optional[int] = None):
        """Quadrature on mesh edges with matching traces from both sides.

        Returns ``(x, ds, sides)``: physical points ``(ne, nq, 2)``, weights
        times edge length ``(ne, nq)`` and, per side, a pair ``(cells, ref)``
        with ``ref`` of shape ``(ne, nq, 2)``. Missing sides of boundary
        edges have ``cells == -1``.
        """
        mesh = self.mesh
        edges = np.asarray(edges, dtype=np.int64)
        rule = edge_rule(degree or face_degree(self.degree))
        t = rule.points
        ends = mesh.edges[edges]
        a, b = mesh.vertices[ends[:, 0]], mesh.vertices[ends[:, 1]]
        x = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
        ds = mesh.edge_lengths[edges, None] * rule.weights[None, :]
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        sides = []
        for s in (0, 1):
            cells = mesh.edge_triangles[edges, s]
            ref = np.zeros(x.shape)
            ok = cells >= 0
            tri = mesh.triangles[cells[ok]]
            la = np.argmax(tri == ends[ok, 0:1], axis=1)
            lb = np.argmax(tri == ends[ok, 1:2], axis=1)
            ra, rb = corners[la], corners[lb]
            ref[ok] = ra[:, None, :] + t[None, :, None] * (rb - ra)[:, None, :]
            sides.append((cells, ref))
        return x, ds, sides

    def scatter_matrix(self, local: np.ndarray, free_only: bool = True) -> sp.csr_matrix:
        """Sum element matrices ``(nt, nloc, nloc)`` into a sparse matrix."""
        nloc = self.ref.n_local
        rows = np.repeat(self.dofmap, nloc, axis=1).ravel()
        cols = np.tile(self.dofmap, (1, nloc)).ravel()
        A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(self.n_nodes,) * 2).tocsr()
        if free_only:
            A = A[self.free][:, self.free]
        A.sum_duplicates()
        return A

    def scatter_vector(self, local: np.ndarray, free_only: bool = True) -> np.ndarray:
        v = np.bincount(self.dofmap.ravel(), weights=local.ravel(), minlength=self.n_nodes)
        return v[self.free] if free_only else v

    @cached_property
    def mass_matrix(self) -> sp.csr_matrix:
        rule, _, dx = self.quadrature(2 * self.degree)
        phi = self.ref.tabulate(rule.ref_points, 0)[0]  # (q, l)
        local = np.einsum("tq,qa,qb->tab", dx, phi, phi)
        return self.scatter_matrix(local)

    @cached_property
    def stiffness_matrix(self) -> sp.csr_matrix:
        rule, _, dx = self.quadrature(max(2 * self.degree - 2, 1))
        cells = np.arange(self.mesh.n_triangles)
        _, dphi = self.basis_at(cells, rule.ref_points, 1)
        local = np.einsum("tq,tqai,tqbi->tab", dx, dphi, dphi)
        return self.scatter_matrix(local)

    def load_vector(self, f, degree: Optional[int] = None) -> np.ndarray:
        """``(f, phi_i)`` for every free basis function.

        ``f`` is a callable of physical points or an :class:`FEFunction`
        on the same mesh.
        """
        rule, x, dx = self.quadrature(degree or error_degree(self.degree))
        phi = self.ref.tabulate(rule.ref_points, 0)[0]
        if isinstance(f, FEFunction):
            if f.space.mesh is not self.mesh:
                raise ValueError("function lives on a different mesh")
            fx = f.evaluate(np.arange(self.mesh.n_triangles), rule.ref_points, 0)[0]
        else:
            fx = np.asarray(f(x), dtype=float)
        return self.scatter_vector(np.einsum("tq,tq,ql->tl", dx, fx, phi))


@dataclass
class FEFunction:
    """A member of a :class:`FunctionSpace` (plus an optional boundary lift).

    ``coefficients`` holds the free nodal values; constrained nodes take
    their value from ``lift`` (zero when absent).
    """

    space: FunctionSpace
    coefficients: np.ndarray
    lift: Optional[np.ndarray] = None

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        if self.coefficients.shape != (self.space.dim,):
            raise ValueError(
                f"expected {self.space.dim} coefficients, got {self.coefficients.shape}"
            )

    @property
    def nodal(self) -> np.ndarray:
        """Values at every Lagrange node, constrained ones included."""
        v = np.zeros(self.space.n_nodes) if self.lift is None else self.lift.copy()
        v[self.space.free] = self.coefficients
        return v

    def with_coefficients(self, coefficients) -> "FEFunction":
        return FEFunction(self.space, coefficients, self.lift)

    def evaluate(self, cells, ref_pts, derivatives: int = 2):
        return self.space.evaluate(self.nodal, cells, ref_pts, derivatives)

    def eval(self, cell: int, bary: Sequence[float]):
        """Value, gradient and Hessian at one barycentric point of ``cell``."""
        bary = np.asarray(bary, dtype=float)
        if bary.shape != (3,) or np.any(bary < -1e-14) or abs(bary.sum() - 1) > 1e-12:
            raise ValueError("invalid barycentric coordinates")
        v, g, H = self.evaluate(np.array([cell]), bary[None, 1:3])
        return float(v[0, 0]), g[0, 0], H[0, 0]

    def at_quadrature(self, degree: Optional[int] = None):
        """Values/gradients/Hessians at volume quadrature points of all cells."""
        rule, x, dx = self.space.quadrature(degree)
        cells = np.arange(self.space.mesh.n_triangles)
        return (x, dx) + self.evaluate(cells, rule.ref_points)

    def dump(self, path) -> None:
        lines = [str(self.space.dim)] + [f"{c:.17g}" for c in self.coefficients]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, space: FunctionSpace, path) -> "FEFunction":
        vals = np.loadtxt(path, ndmin=1)
        if int(vals[0]) != space.dim:
            raise ValueError("dimension mismatch between file and space")
        return cls(space, vals[1:])


def interpolate_between(U: FEFunction, space: FunctionSpace, lift: Optional[Callable] = None) -> FEFunction:
    """Transfer ``U`` to ``space`` (a refinement of its mesh) by nodal interpolation.

    Nodes are located in the parent mesh with a point-location search.
    """
    from .locate import locate_points

    cells, ref = locate_points(U.space, space.node_coords)
    vals = U.space.evaluate(U.nodal, cells, ref[:, None, :], 0)[0][:, 0]
    liftv = space.boundary_lift(lift) if lift is not None else None
    return FEFunction(space, vals[space.free], liftv)


# ----------------------------------------------------------------------
# projections and norms


def l2_project(space: FunctionSpace, f, tol: float = 1e-12) -> FEFunction:
    """L2 projection of ``f`` (callable or FEFunction) onto the zero-trace space."""
    from .solver import linear_solve

    b = space.load_vector(f)
    if space.dim == 0:
        return space.zero()
    M = space.mass_matrix
    assert M.diagonal().min() > 0, "singular mass matrix"
    x = linear_solve(M, b, tol=tol)
    return FEFunction(space, x)


def error_norms(
    U: FEFunction,
    u_exact: Callable,
    grad_exact: Callable,
    p: float,
    degree: Optional[int] = None,
):
    """``(||u - U||_{L^p}, |u - U|_{W^{1,p}})`` by quadrature."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    x, dx, v, g, _ = U.at_quadrature(degree or error_degree(U.space.degree))
    e = np.abs(u_exact(x) - v)
    ge = np.linalg.norm(grad_exact(x) - g, axis=-1)
    lp = float(np.sum(dx * e**p) ** (1.0 / p))
    w1p = float(np.sum(dx * ge**p) ** (1.0 / p))
    return lp, w1p


def eoc(values: Sequence[float], meshsizes: Sequence[float]) -> np.ndarray:
    """Experimental orders of convergence between consecutive entries."""
    a = np.asarray(values, dtype=float)
    h = np.asarray(meshsizes, dtype=float)
    if a.shape != h.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two equal-length sequences with at least two entries")
    if np.any(a <= 0) or np.any(h <= 0):
        raise ValueError("values and meshsizes must be positive")
    if np.any(np.diff(h) >= 0):
        raise ValueError("meshsizes must be strictly decreasing")
    return np.log(a[1:] / a[:-1]) / np.log(h[1:] / h[:-1])
