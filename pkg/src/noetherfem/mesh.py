"""Conforming triangulations of polygonal domains in 2D.

Triangles are stored counter-clockwise with the newest vertex first, so
``triangles[:, 0]`` is the vertex opposite the refinement edge
``(triangles[:, 1], triangles[:, 2])``. Cyclic rotation keeps the
orientation, which lets both conventions live in one array.

Local edge ``i`` of a triangle is the edge opposite local vertex ``i``; it
runs from local vertex ``(i + 1) % 3`` to ``(i + 2) % 3``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np

GEOMETRY_TOL = 1e-12

Projection = Callable[[np.ndarray], np.ndarray]


def project_to_unit_circle(points: np.ndarray) -> np.ndarray:
    """Radially project points onto the unit circle."""
    r = np.linalg.norm(points, axis=-1, keepdims=True)
    return points / r


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming triangulation.

    Parameters
    ----------
    vertices : ndarray, shape (nv, 2)
    triangles : ndarray, shape (nt, 3)
        Counter-clockwise vertex indices, newest vertex first.
    generation : ndarray, shape (nt,), optional
        Number of refinements that produced each triangle.
    projection : callable, optional
        Maps boundary points onto the curved boundary being approximated.
        It is re-applied to boundary vertices after every refinement.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    generation: np.ndarray = None
    projection: Optional[Projection] = field(default=None, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must have shape (nv, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError("triangles must have shape (nt, 3)")
        g = self.generation
        g = np.zeros(len(t), dtype=np.int64) if g is None else np.asarray(g, dtype=np.int64)
        for a in (v, t, g):
            a.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "generation", g)

    # ------------------------------------------------------------------
    # sizes

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    # ------------------------------------------------------------------
    # topology

    @cached_property
    def _edge_topology(self):
        t = self.triangles
        nt = len(t)
        local = np.stack([t[:, [1, 2]], t[:, [2, 0]], t[:, [0, 1]]], axis=1)
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        edges, inverse, counts = np.unique(
            pairs, axis=0, return_inverse=True, return_counts=True
        )
        inverse = inverse.reshape(nt, 3)
        if np.any(counts > 2):
            raise ValueError("non-manifold triangulation: an edge has more than two triangles")
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_local = np.full((len(edges), 2), -1, dtype=np.int64)
        flat = inverse.ravel()
        order = np.argsort(flat, kind="stable")
        first = np.ones(len(order), dtype=bool)
        first[1:] = flat[order][1:] != flat[order][:-1]
        tri_idx = order // 3
        loc_idx = order % 3
        e_sorted = flat[order]
        edge_tris[e_sorted[first], 0] = tri_idx[first]
        edge_local[e_sorted[first], 0] = loc_idx[first]
        edge_tris[e_sorted[~first], 1] = tri_idx[~first]
        edge_local[e_sorted[~first], 1] = loc_idx[~first]
        for a in (edges, inverse, edge_tris, edge_local):
            a.setflags(write=False)
        return edges, inverse, edge_tris, edge_local

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs, shape (ne, 2)."""
        return self._edge_topology[0]

    @property
    def tri_edges(self) -> np.ndarray:
        """Edge index of local edge ``i`` of each triangle, shape (nt, 3)."""
        return self._edge_topology[1]

    @property
    def edge_triangles(self) -> np.ndarray:
        """Incident triangles per edge, ``-1`` marks a missing second side."""
        return self._edge_topology[2]

    @property
    def edge_local_index(self) -> np.ndarray:
        """Local edge index within each incident triangle."""
        return self._edge_topology[3]

    @cached_property
    def is_boundary_edge(self) -> np.ndarray:
        return self.edge_triangles[:, 1] < 0

    @cached_property
    def interior_edges(self) -> np.ndarray:
        """Indices of edges shared by two triangles."""
        return np.flatnonzero(~self.is_boundary_edge)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Indices of edges with a single incident triangle."""
        return np.flatnonzero(self.is_boundary_edge)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.edges[self.boundary_edges])

    # ------------------------------------------------------------------
    # geometry

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Affine maps from the reference triangle, shape (nt, 2, 2)."""
        p = self.vertices[self.triangles]
        return np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        J = self.jacobians
        return 0.5 * (J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0])

    @property
    def areas(self) -> np.ndarray:
        return np.abs(self.signed_areas)

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return 0.5 * (self.vertices[self.edges[:, 0]] + self.vertices[self.edges[:, 1]])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit outward normals seen from each side, shape (ne, 2, 2).

        ``edge_normals[e, s]`` is outward for ``edge_triangles[e, s]``; the
        second side of a boundary edge is zero.
        """
        ne = self.n_edges
        normals = np.zeros((ne, 2, 2))
        for side in (0, 1):
            tri = self.edge_triangles[:, side]
            ok = tri >= 0
            loc = self.edge_local_index[ok, side]
            t = self.triangles[tri[ok]]
            a = t[np.arange(len(t)), (loc + 1) % 3]
            b = t[np.arange(len(t)), (loc + 2) % 3]
            d = self.vertices[b] - self.vertices[a]
            n = np.column_stack([d[:, 1], -d[:, 0]])
            normals[ok, side] = n / np.linalg.norm(n, axis=1, keepdims=True)
        return normals

    @cached_property
    def diameters(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d = np.stack(
            [
                np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
            ],
            axis=1,
        )
        return d

    @property
    def h_max(self) -> float:
        return float(self.edge_lengths.max())

    def inradius_ratios(self) -> np.ndarray:
        """Per-triangle ratio of inradius to diameter."""
        sides = self.diameters
        semi = 0.5 * sides.sum(axis=1)
        rho = self.areas / semi
        return rho / sides.max(axis=1)

    # ------------------------------------------------------------------
    # checks

    def check(self, tol: float = GEOMETRY_TOL) -> None:
        """Raise ``AssertionError`` if a structural invariant fails."""
        assert np.all(self.signed_areas > 0), "non-positive triangle orientation"
        assert len(np.unique(self.triangles)) == self.n_vertices, "unused vertices"
        et = self.edge_triangles
        assert np.all(et[:, 0] >= 0)
        n = self.edge_normals[self.interior_edges]
        assert np.allclose(n[:, 0], -n[:, 1], atol=tol, rtol=0), "n1 != -n2"
        # a vertex lying in the interior of a boundary edge is a hanging node
        _check_no_hanging_nodes(self, tol)
        # Euler characteristic of a simply connected domain
        assert self.n_vertices - self.n_edges + self.n_triangles == 1, "not disk topology"


def _check_no_hanging_nodes(mesh: Mesh, tol: float) -> None:
    be = mesh.edges[mesh.boundary_edges]
    if len(be) == 0:
        return
    a = mesh.vertices[be[:, 0]]
    b = mesh.vertices[be[:, 1]]
    bv = mesh.vertices[mesh.boundary_vertices]
    # vectorized in chunks over boundary edges
    for start in range(0, len(be), 512):
        sa, sb = a[start : start + 512], b[start : start + 512]
        d = sb - sa
        L2 = (d * d).sum(axis=1)
        rel = bv[None, :, :] - sa[:, None, :]
        s = (rel * d[:, None, :]).sum(axis=2) / L2[:, None]
        perp = rel - s[..., None] * d[:, None, :]
        dist = np.linalg.norm(perp, axis=2)
        inside = (s > tol) & (s < 1 - tol) & (dist < tol * (1 + np.sqrt(L2))[:, None])
        assert not inside.any(), "hanging node on a boundary edge"


def shape_regularity(mesh: Mesh) -> float:
    """Infimum over triangles of inradius divided by diameter."""
    return float(mesh.inradius_ratios().min())


# ----------------------------------------------------------------------
# newest vertex helpers


def _orient_ccw(vertices: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p = vertices[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    tris = tris.copy()
    tris[neg] = tris[neg][:, [0, 2, 1]]
    return tris


def newest_vertex_by_longest_edge(vertices: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Rotate each triangle so the vertex opposite its longest edge comes first."""
    p = vertices[tris]
    opp = np.stack(
        [
            np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 1], axis=1),
        ],
        axis=1,
    )
    # ties resolved towards the lowest local index for reproducibility
    first = np.argmax(opp - 1e-12 * opp.max(axis=1, keepdims=True) * np.arange(3), axis=1)
    idx = (first[:, None] + np.arange(3)) % 3
    return np.take_along_axis(tris, idx, axis=1)


def from_arrays(vertices, triangles, projection: Optional[Projection] = None) -> Mesh:
    """Build a mesh from raw arrays, fixing orientation and newest vertices."""
    vertices = np.asarray(vertices, dtype=float)
    tris = _orient_ccw(vertices, np.asarray(triangles, dtype=np.int64))
    tris = newest_vertex_by_longest_edge(vertices, tris)
    return Mesh(vertices, tris, projection=projection)


# ----------------------------------------------------------------------
# generators


def _coarse_disk() -> Mesh:
    verts = [(0.0, 0.0)]
    inner = [0.5 * np.array([np.cos(a), np.sin(a)]) for a in np.arange(4) * np.pi / 2]
    outer = [np.array([np.cos(a), np.sin(a)]) for a in np.arange(8) * np.pi / 4]
    verts += [tuple(q) for q in inner] + [tuple(b) for b in outer]
    q = lambda j: 1 + j % 4  # noqa: E731
    b = lambda j: 5 + j % 8  # noqa: E731
    tris = []
    for j in range(4):
        tris.append((0, q(j), q(j + 1)))
        tris.append((q(j), b(2 * j), b(2 * j + 1)))
        tris.append((q(j), b(2 * j + 1), q(j + 1)))
        tris.append((q(j + 1), b(2 * j + 1), b(2 * j + 2)))
    return from_arrays(np.array(verts), np.array(tris), projection=project_to_unit_circle)


def build_disk_mesh(levels: int) -> Mesh:
    """Structured triangulation of the unit disk.

    A 16-triangle coarse mesh (a central square split into four triangles
    plus a ring reaching the circle) is red-refined ``levels`` times with
    boundary vertices projected radially onto the circle after each step.
    """
    if levels < 0:
        raise ValueError("levels must be non-negative")
    mesh = _coarse_disk()
    for _ in range(levels):
        mesh = uniform_refine(mesh)
    return mesh


def build_square_mesh(n: int, jitter: float = 0.2, seed: Optional[int] = 0) -> Mesh:
    """Triangulation of ``[-1, 1]^2`` from an ``n x n`` grid.

    Each cell is split along one diagonal, alternating in a criss-cross
    pattern. Interior vertices are moved by a uniform random offset of at
    most ``jitter * h`` per coordinate; ``jitter=0`` gives the regular grid.
    """
    if n < 1:
        raise ValueError("n must be positive")
    h = 2.0 / n
    s = np.linspace(-1.0, 1.0, n + 1)
    X, Y = np.meshgrid(s, s, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    if jitter:
        rng = np.random.default_rng(seed)
        offset = rng.uniform(-jitter * h, jitter * h, size=verts.shape)
        interior = (np.abs(verts) < 1 - 0.5 * h).all(axis=1)
        verts[interior] += offset[interior]
    idx = lambda i, j: i * (n + 1) + j  # noqa: E731
    tris = []
    for i in range(n):
        for j in range(n):
            a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
            if (i + j) % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    return from_arrays(verts, np.array(tris))


# ----------------------------------------------------------------------
# refinement


def _edge_midpoint_vertices(mesh: Mesh, marked_edges: np.ndarray):
    """Append a midpoint vertex for every marked edge; return new vertex array and map."""
    mid_index = np.full(mesh.n_edges, -1, dtype=np.int64)
    ids = np.flatnonzero(marked_edges)
    mid_index[ids] = mesh.n_vertices + np.arange(len(ids))
    verts = np.vstack([mesh.vertices, mesh.edge_midpoints[ids]])
    return verts, mid_index


def _finish(mesh: Mesh, verts: np.ndarray, tris: np.ndarray, gen: np.ndarray) -> Mesh:
    out = Mesh(verts, tris, gen, projection=mesh.projection)
    if mesh.projection is not None:
        bv = out.boundary_vertices
        verts = out.vertices.copy()
        verts[bv] = mesh.projection(verts[bv])
        out = Mesh(verts, tris, gen, projection=mesh.projection)
    return out


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement: split every triangle into four similar children.

    Corner children keep the parent's corner as newest vertex; the middle
    child takes the midpoint opposite the parent's newest vertex, so every
    child inherits the parent's refinement-edge direction.
    """
    verts, mid = _edge_midpoint_vertices(mesh, np.ones(mesh.n_edges, dtype=bool))
    t = mesh.triangles
    m = mid[mesh.tri_edges]  # m[:, i] is the midpoint opposite local vertex i
    v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
    m0, m1, m2 = m[:, 0], m[:, 1], m[:, 2]
    children = np.stack(
        [
            np.column_stack([v0, m2, m1]),
            np.column_stack([m2, v1, m0]),
            np.column_stack([m1, m0, v2]),
            np.column_stack([m0, m1, m2]),
        ],
        axis=1,
    ).reshape(-1, 3)
    gen = np.repeat(mesh.generation + 2, 4)
    return _finish(mesh, verts, children, gen)


def bisect(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Newest vertex bisection of the marked triangles with conforming closure.

    Every marked triangle is bisected through its newest vertex. Refinement
    edges are then marked until each triangle with a marked edge also has
    its refinement edge marked, which removes all hanging nodes. Each
    triangle is split into at most four children.
    """
    marked = np.fromiter(marked, dtype=np.int64) if not isinstance(marked, np.ndarray) else marked.astype(np.int64)
    if marked.size == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.n_triangles:
        raise IndexError("marked triangle index out of range")
    te = mesh.tri_edges
    edge_marked = np.zeros(mesh.n_edges, dtype=bool)
    edge_marked[te[marked, 0]] = True
    while True:
        need = edge_marked[te].any(axis=1) & ~edge_marked[te[:, 0]]
        if not need.any():
            break
        edge_marked[te[need, 0]] = True

    verts, mid = _edge_midpoint_vertices(mesh, edge_marked)
    # midpoint lookup keyed by sorted vertex pairs of the parent mesh
    nv_old = mesh.n_vertices
    keys = mesh.edges[:, 0] * nv_old + mesh.edges[:, 1]
    order = np.argsort(keys)
    skeys = keys[order]

    def midpoint_of(a, b):
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        k = lo * nv_old + hi
        out = np.full(len(k), -1, dtype=np.int64)
        old = hi < nv_old
        pos = np.searchsorted(skeys, k[old])
        pos = np.minimum(pos, len(skeys) - 1)
        hit = skeys[pos] == k[old]
        res = np.full(old.sum(), -1, dtype=np.int64)
        res[hit] = mid[order[pos[hit]]]
        out[old] = res
        return out

    tris = mesh.triangles.copy()
    gen = mesh.generation.copy()
    done_t, done_g = [], []
    while len(tris):
        m = midpoint_of(tris[:, 1], tris[:, 2])
        split = m >= 0
        done_t.append(tris[~split])
        done_g.append(gen[~split])
        if not split.any():
            break
        t, mm, g = tris[split], m[split], gen[split] + 1
        v0, v1, v2 = t[:, 0], t[:, 1], t[:, 2]
        left = np.column_stack([mm, v0, v1])
        right = np.column_stack([mm, v2, v0])
        tris = np.vstack([left, right])
        gen = np.concatenate([g, g])
    out_t = np.vstack(done_t)
    out_g = np.concatenate(done_g)
    return _finish(mesh, verts, out_t, out_g)


# ----------------------------------------------------------------------
# text format


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``nv nt ne_b``, vertices, triangles (with newest vertex) and boundary edges."""
    be = mesh.edges[mesh.boundary_edges]
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {len(be)}"]
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines += [f"{a} {b} {c} {a}" for a, b, c in mesh.triangles]
    lines += [f"{a} {b}" for a, b in be]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh(path, projection: Optional[Projection] = None) -> Mesh:
    """Inverse of :func:`write_mesh`."""
    tokens = Path(path).read_text().split()
    nv, nt, nb = (int(tokens[i]) for i in range(3))
    pos = 3
    verts = np.array(tokens[pos : pos + 2 * nv], dtype=float).reshape(nv, 2)
    pos += 2 * nv
    rows = np.array(tokens[pos : pos + 4 * nt], dtype=np.int64).reshape(nt, 4)
    pos += 4 * nt
    bedges = np.array(tokens[pos : pos + 2 * nb], dtype=np.int64).reshape(nb, 2)
    tris = rows[:, :3]
    newest = rows[:, 3]
    first = np.argmax(tris == newest[:, None], axis=1)
    if not np.all(tris[np.arange(nt), first] == newest):
        raise ValueError("newest vertex does not belong to its triangle")
    tris = np.take_along_axis(tris, (first[:, None] + np.arange(3)) % 3, axis=1)
    mesh = Mesh(verts, tris, projection=projection)
    got = {tuple(e) for e in mesh.edges[mesh.boundary_edges]}
    want = {tuple(sorted(e)) for e in bedges}
    if got != want:
        raise ValueError("boundary edge list does not match the triangulation")
    return mesh
