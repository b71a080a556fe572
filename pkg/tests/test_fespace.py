import numpy as np
import pytest
from hypothesis import given, strategies as st

from noetherfem.fespace import (
    FEFunction,
    FunctionSpace,
    ReferenceElement,
    eoc,
    error_norms,
    interpolate_between,
    l2_project,
    reference_nodes,
)
from noetherfem.lagrangian import PLaplacian, benchmark_grad_u, benchmark_source, benchmark_u
from noetherfem.mesh import bisect, build_disk_mesh, build_square_mesh, uniform_refine
from noetherfem.solver import newton_solve


def ones(x):
    return np.ones(x.shape[:-1])


def all_cells(V):
    return np.arange(V.mesh.n_triangles)


# ----------------------------------------------------------------------
# reference element


@pytest.mark.parametrize("k", [1, 2, 3])
def test_nodal_duality(k):
    nodes = reference_nodes(k)
    val = ReferenceElement(k).tabulate(nodes, 0)[0]
    np.testing.assert_allclose(val, np.eye(len(nodes)), atol=1e-13)


@given(k=st.sampled_from([1, 2, 3]), seed=st.integers(0, 2**31))
def test_partition_of_unity(k, seed):
    rng = np.random.default_rng(seed)
    mesh = build_square_mesh(3, seed=seed)
    V = FunctionSpace(mesh, k, dirichlet=False)
    cells = rng.integers(0, mesh.n_triangles, 5)
    pts = rng.dirichlet(np.ones(3), size=(5, 4))[..., 1:]
    val, grad, hess = V.basis_at(cells, pts)
    np.testing.assert_allclose(val.sum(-1), 1.0, atol=1e-13)
    np.testing.assert_allclose(grad.sum(-2), 0.0, atol=1e-11)
    np.testing.assert_allclose(hess.sum(-3), 0.0, atol=1e-9)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_dof_counts(k):
    mesh = build_square_mesh(4)
    V = FunctionSpace(mesh, k, dirichlet=False)
    expected = mesh.n_vertices + (k - 1) * mesh.n_edges + (mesh.n_triangles if k == 3 else 0)
    assert V.n_nodes == V.dim == expected
    W = FunctionSpace(mesh, k)
    assert W.dim == expected - k * len(mesh.boundary_edges)


def test_invalid_degree():
    with pytest.raises(ValueError):
        ReferenceElement(4)


# ----------------------------------------------------------------------
# evaluation


def test_constant_one():
    mesh = build_disk_mesh(1)
    V = FunctionSpace(mesh, 2, dirichlet=False)
    U = V.interpolate(ones)
    rule = V.quadrature(4)[0]
    v, g, H = U.evaluate(all_cells(V), rule.ref_points)
    np.testing.assert_allclose(v, 1.0, atol=1e-14)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_p1_reproduces_linear():
    mesh = build_square_mesh(4, seed=3)
    V = FunctionSpace(mesh, 1, dirichlet=False)
    U = V.interpolate(lambda x: x[..., 0])
    v, g, H = U.evaluate(all_cells(V), np.array([[0.2, 0.3], [0.6, 0.1]]))
    np.testing.assert_allclose(g, np.broadcast_to([1.0, 0.0], g.shape), atol=1e-13)
    assert np.abs(H).max() == 0.0


def test_p2_hessian_of_square():
    mesh = build_square_mesh(4, seed=3)
    V = FunctionSpace(mesh, 2, dirichlet=False)
    U = V.interpolate(lambda x: x[..., 0] ** 2)
    _, _, H = U.evaluate(all_cells(V), np.array([[0.2, 0.3]]))
    np.testing.assert_allclose(H, np.broadcast_to([[2.0, 0], [0, 0]], H.shape), atol=1e-10)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_polynomial_reproduction(k):
    mesh = build_disk_mesh(1)
    V = FunctionSpace(mesh, k, dirichlet=False)
    f = lambda x: (1 + x[..., 0] - 2 * x[..., 1]) ** k  # noqa: E731
    U = V.interpolate(f)
    rule, x, _ = V.quadrature(5)
    v = U.evaluate(all_cells(V), rule.ref_points, 0)[0]
    np.testing.assert_allclose(v, f(x), atol=1e-12)


def test_eval_validates_barycentric():
    V = FunctionSpace(build_square_mesh(2), 1)
    U = V.zero()
    U.eval(0, [0.2, 0.3, 0.5])
    with pytest.raises(ValueError):
        U.eval(0, [0.2, 0.3, 0.6])
    with pytest.raises(ValueError):
        FEFunction(V, np.zeros(V.dim + 1))


def test_interpolate_between_refinement_exact_for_p2():
    mesh = build_square_mesh(3, seed=1)
    V = FunctionSpace(mesh, 2, dirichlet=False)
    U = V.interpolate(lambda x: x[..., 0] * x[..., 1] + x[..., 0] ** 2)
    fine = FunctionSpace(bisect(mesh, [0, 3, 7]), 2, dirichlet=False)
    W = interpolate_between(U, fine)
    np.testing.assert_allclose(W.nodal, fine.interpolate(lambda x: x[..., 0] * x[..., 1] + x[..., 0] ** 2).nodal, atol=1e-12)


def test_dump_round_trip(tmp_path):
    V = FunctionSpace(build_disk_mesh(1), 2)
    U = V.function(np.random.default_rng(0).standard_normal(V.dim))
    path = tmp_path / "u.txt"
    U.dump(path)
    lines = path.read_text().split()
    assert int(lines[0]) == V.dim
    back = FEFunction.load(V, path)
    assert back.coefficients.tobytes() == U.coefficients.tobytes()
    with pytest.raises(ValueError):
        FEFunction.load(FunctionSpace(build_disk_mesh(1), 1), path)


# ----------------------------------------------------------------------
# L2 projection


@pytest.mark.parametrize("k", [1, 2, 3])
def test_projection_of_member(k):
    V = FunctionSpace(build_disk_mesh(2), k)
    U = V.function(np.random.default_rng(k).standard_normal(V.dim))
    P = l2_project(V, U)
    np.testing.assert_allclose(P.coefficients, U.coefficients, atol=1e-10)


def test_projection_of_zero():
    V = FunctionSpace(build_disk_mesh(2), 2)
    assert np.all(l2_project(V, lambda x: np.zeros(x.shape[:-1])).coefficients == 0)


def test_projection_of_one_is_orthogonal():
    V = FunctionSpace(build_disk_mesh(2), 1)
    P = l2_project(V, ones)
    assert np.abs(P.nodal[V.boundary_mask]).max() == 0
    assert np.abs(P.coefficients - 1).max() > 0.1
    # (P 1 - 1, v) = 0 for every basis function
    r = V.mass_matrix @ P.coefficients - V.load_vector(ones)
    assert np.abs(r).max() <= 1e-10


@given(seed=st.integers(0, 2**31), k=st.sampled_from([1, 2]))
def test_projection_idempotent(seed, k):
    rng = np.random.default_rng(seed)
    V = FunctionSpace(build_square_mesh(3, seed=seed), k)
    a, b = rng.standard_normal(2)
    P = l2_project(V, lambda x: np.sin(a * x[..., 0]) + b * x[..., 1] ** 3)
    np.testing.assert_allclose(l2_project(V, P).coefficients, P.coefficients, atol=1e-10)


# ----------------------------------------------------------------------
# error norms and EOC


def test_error_of_exact_member():
    V = FunctionSpace(build_square_mesh(3), 2, dirichlet=False)
    u = lambda x: x[..., 0] ** 2 - x[..., 1]  # noqa: E731
    gu = lambda x: np.stack([2 * x[..., 0], -np.ones(x.shape[:-1])], -1)  # noqa: E731
    U = V.interpolate(u)
    for p in (2.0, 3.5):
        lp, w = error_norms(U, u, gu, p)
        assert lp <= 1e-12 and w <= 1e-12


def test_error_of_single_hat():
    mesh = build_square_mesh(3, seed=4)
    V = FunctionSpace(mesh, 1)
    i = 2
    coeff = np.zeros(V.dim)
    coeff[i] = 1.0
    U = V.function(coeff)
    node = V.free[i]
    star = np.flatnonzero(np.any(mesh.triangles == node, axis=1))
    # int lambda^2 = |K| / 6 on each triangle of the star
    oracle = np.sqrt(mesh.areas[star].sum() / 6)
    zero = lambda x: np.zeros(x.shape[:-1])  # noqa: E731
    lp, _ = error_norms(U, zero, lambda x: np.zeros(x.shape), 2.0)
    assert lp == pytest.approx(oracle, rel=1e-13)


@given(s=st.floats(-5, 5).filter(lambda s: abs(s) > 1e-3), p=st.floats(1.5, 5))
def test_error_norms_homogeneous(s, p):
    V = FunctionSpace(build_square_mesh(2, seed=0), 1)
    U = V.function(np.linspace(-1, 1, V.dim))
    zero = lambda x: np.zeros(x.shape[:-1])  # noqa: E731
    zg = lambda x: np.zeros(x.shape)  # noqa: E731
    a = error_norms(U, zero, zg, p)
    b = error_norms(U.with_coefficients(s * U.coefficients), zero, zg, p)
    assert b[0] == pytest.approx(abs(s) * a[0], rel=1e-12)
    assert b[1] == pytest.approx(abs(s) * a[1], rel=1e-12)


def test_eoc_table_values():
    assert eoc([1.12725161, 0.70442091], [1.0, 0.5])[0] == pytest.approx(0.678, abs=5e-4)
    assert eoc([3.63060492, 2.98329491], [1.0, 0.5])[0] == pytest.approx(0.283, abs=5e-4)
    assert eoc([2.5, 2.5], [0.3, 0.1])[0] == 0.0


@pytest.mark.parametrize(
    "values,h",
    [([1.0, 0.0], [1.0, 0.5]), ([1.0, -1.0], [1.0, 0.5]), ([1.0, 0.5], [0.0, 0.5]), ([1.0], [1.0])],
)
def test_eoc_domain_errors(values, h):
    with pytest.raises(ValueError):
        eoc(values, h)


def test_disk_p2_gradient_rate():
    hs, errs = [], []
    for L in (3, 4):
        mesh = build_disk_mesh(L)
        V = FunctionSpace(mesh, 1)
        U = newton_solve(V, PLaplacian(2.0, benchmark_source(2.0))).U
        errs.append(error_norms(U, benchmark_u, benchmark_grad_u, 2.0)[1])
        hs.append(mesh.h_max)
    assert 0.8 <= eoc(errs, hs)[0] <= 1.3
