"""Point location in a triangulation."""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


def locate_points(space, x: np.ndarray, tol: float = 1e-10, candidates: int = 16):
    """Return ``(cells, ref_pts)`` with every point of ``x`` inside its cell.

    Points outside the mesh are snapped to the cell with the least negative
    barycentric coordinate.
    """
    mesh = space.mesh
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    tree = cKDTree(centroids)
    k = min(candidates, mesh.n_triangles)
    _, cand = tree.query(x, k=k)
    cand = cand.reshape(len(x), k)
    ref = space.map_to_reference(cand, x[:, None, :])
    bary_min = np.minimum(np.minimum(ref[..., 0], ref[..., 1]), 1 - ref[..., 0] - ref[..., 1])
    best = np.argmax(bary_min, axis=1)
    rows = np.arange(len(x))
    miss = bary_min[rows, best] < -tol
    if miss.any():
        # widen the search for the few points whose neighbourhood was too small
        allref = space.map_to_reference(
            np.arange(mesh.n_triangles)[None, :], x[miss][:, None, :]
        )
        bm = np.minimum(np.minimum(allref[..., 0], allref[..., 1]), 1 - allref.sum(-1))
        b2 = np.argmax(bm, axis=1)
        cells = cand[rows, best].copy()
        refs = ref[rows, best].copy()
        cells[miss] = b2
        refs[miss] = allref[np.arange(miss.sum()), b2]
        return cells, refs
    return cand[rows, best], ref[rows, best]
