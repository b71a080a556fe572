import numpy as np
import pytest
from hypothesis import given, strategies as st

from noetherfem.fespace import FunctionSpace
from noetherfem.lagrangian import (
    InterpolatedSource,
    PLaplacian,
    SingularStateError,
    SmoothSource,
    benchmark_grad_u,
    benchmark_u,
    derivatives,
    gaussian_f,
    gaussian_grad_f,
    manufactured_f,
    manufactured_grad_f,
    total_gradient_L,
)
from noetherfem.mesh import build_disk_mesh, build_square_mesh


def sine_source():
    return SmoothSource(
        lambda x: np.sin(x[..., 0]) * np.cos(2 * x[..., 1]),
        lambda x: np.stack(
            [np.cos(x[..., 0]) * np.cos(2 * x[..., 1]), -2 * np.sin(x[..., 0]) * np.sin(2 * x[..., 1])], -1
        ),
    )


def test_p2_derivatives():
    L, dLu, dLg, dLx, H = derivatives(PLaplacian(2.0), np.zeros(2), np.array(0.0), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(dLg, [1.0, 0.0])
    np.testing.assert_array_equal(H, np.eye(2))


def test_p4_derivatives():
    L, _, dLg, _, _ = derivatives(PLaplacian(4.0), np.zeros(2), np.array(0.0), np.array([1.0, 1.0]))
    np.testing.assert_allclose(dLg, [2.0, 2.0], rtol=1e-15)
    assert L == pytest.approx(1.0, rel=1e-15)


def test_p3_zero_gradient():
    L, _, dLg, _, _ = derivatives(PLaplacian(3.0), np.zeros(2), np.array(0.0), np.zeros(2))
    assert np.all(dLg == 0) and L == 0


def test_singular_state():
    with pytest.raises(SingularStateError):
        PLaplacian(1.5).derivatives(np.zeros(2), np.array(0.0), np.zeros(2))
    # regularisation removes the singularity
    d = PLaplacian(1.5, eps=1e-8).derivatives(np.zeros(2), np.array(0.0), np.zeros(2))
    assert np.all(np.isfinite(d.d2L_dgdg))


def test_invalid_exponent():
    with pytest.raises(ValueError):
        PLaplacian(1.0)


def test_first_derivatives_match_finite_differences():
    rng = np.random.default_rng(0)
    n = 200
    x = rng.uniform(-1, 1, (n, 2))
    u = rng.standard_normal(n)
    g = rng.standard_normal((n, 2))
    h = 1e-6
    for p in (2.0, 2.5, 3.0, 4.0, 5.0):
        model = PLaplacian(p, sine_source())
        d = model.derivatives(x, u, g)
        L = lambda x, u, g: model.derivatives(x, u, g).L  # noqa: E731
        fd_u = (L(x, u + h, g) - L(x, u - h, g)) / (2 * h)
        np.testing.assert_allclose(d.dL_du, fd_u, rtol=1e-6, atol=1e-8)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            fd_g = (L(x, u, g + e) - L(x, u, g - e)) / (2 * h)
            fd_x = (L(x + e, u, g) - L(x - e, u, g)) / (2 * h)
            np.testing.assert_allclose(d.dL_dg[:, i], fd_g, rtol=1e-6, atol=1e-8)
            np.testing.assert_allclose(d.dL_dx[:, i], fd_x, rtol=1e-6, atol=1e-8)
            dg = (model.derivatives(x, u, g + e).dL_dg - model.derivatives(x, u, g - e).dL_dg) / (2 * h)
            np.testing.assert_allclose(d.d2L_dgdg[:, :, i], dg, rtol=1e-6, atol=1e-8)


@given(p=st.floats(2.0, 6.0), g=st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_convexity(p, g):
    H = PLaplacian(p).derivatives(np.zeros(2), np.array(0.0), np.array(g)).d2L_dgdg
    scale = max(1.0, np.abs(H).max())
    assert np.linalg.eigvalsh(H).min() >= -1e-12 * scale
    np.testing.assert_allclose(H, H.T, atol=0)


def test_manufactured_f_at_origin():
    assert manufactured_f(2.0, np.zeros(2)) == pytest.approx(-4 * np.pi, rel=1e-15)
    assert manufactured_f(2.0, np.zeros(2)) == pytest.approx(-12.566371, abs=1e-6)


def test_manufactured_f_half():
    s = 0.25
    c, sn = np.cos(np.pi * s), np.sin(np.pi * s)
    expected = -(4 * np.pi * c - 4 * np.pi**2 * s * sn)
    assert manufactured_f(2.0, np.array([0.5, 0.0])) == pytest.approx(expected, rel=1e-14)


def test_manufactured_f_unbounded_for_small_p():
    vals = [manufactured_f(1.5, np.array([r, 0.0])) for r in (1e-2, 1e-4, 1e-6)]
    assert vals[0] > vals[1] > vals[2]
    assert vals[2] < -1e2
    assert np.isinf(manufactured_f(1.5, np.zeros(2)))


@pytest.mark.parametrize("p", [2.0, 2.5, 3.0, 4.0, 5.0])
def test_manufactured_f_makes_benchmark_exact(p):
    rng = np.random.default_rng(int(p * 10))
    r = rng.uniform(0.05, 0.95, 40)
    r = r[np.abs(r**2 - 0.5) > 0.05]  # away from the circle where the flux degenerates
    a = rng.uniform(0, 2 * np.pi, len(r))
    x = np.column_stack([r * np.cos(a), r * np.sin(a)])
    model = PLaplacian(p)
    flux = lambda y: model.derivatives(y, benchmark_u(y), benchmark_grad_u(y)).dL_dg  # noqa: E731
    h = 1e-5
    div = np.zeros(len(x))
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        div += (flux(x + e)[:, i] - flux(x - e)[:, i]) / (2 * h)
    res = -div - manufactured_f(p, x)
    assert np.abs(res).max() <= 1e-6 * max(1.0, np.abs(div).max())


@pytest.mark.parametrize("p", [2.0, 3.0, 4.5])
def test_manufactured_grad_f(p):
    rng = np.random.default_rng(1)
    x = rng.uniform(-0.7, 0.7, (30, 2))
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (manufactured_f(p, x + e) - manufactured_f(p, x - e)) / (2 * h)
        np.testing.assert_allclose(manufactured_grad_f(p, x)[:, i], fd, rtol=1e-6, atol=1e-5)
    fd = (gaussian_f(x + [h, 0]) - gaussian_f(x - [h, 0])) / (2 * h)
    np.testing.assert_allclose(gaussian_grad_f(x)[:, 0], fd, rtol=1e-6, atol=1e-5)


def test_total_gradient_p1_constant_source():
    mesh = build_square_mesh(3, seed=2)
    V = FunctionSpace(mesh, 1, dirichlet=False)
    U = V.interpolate(lambda x: 2 * x[..., 0] - x[..., 1])
    model = PLaplacian(3.0, SmoothSource(lambda x: 2.0 + 0 * x[..., 0], lambda x: np.zeros(x.shape)))
    bary = np.array([0.2, 0.5, 0.3])
    v, g, _ = U.eval(4, bary)
    d = model.derivatives(np.zeros(2), np.array(v), g)
    np.testing.assert_allclose(total_gradient_L(model, U, 4, bary), d.dL_dx + d.dL_du * g, atol=1e-13)


def test_total_gradient_p2_square():
    mesh = build_square_mesh(3, seed=2)
    V = FunctionSpace(mesh, 2, dirichlet=False)
    U = V.interpolate(lambda x: x[..., 0] ** 2)
    bary = np.array([0.2, 0.5, 0.3])
    x1 = V.map_to_physical(np.array([7]), bary[None, 1:])[0, 0, 0]
    np.testing.assert_allclose(total_gradient_L(PLaplacian(2.0), U, 7, bary), [4 * x1, 0.0], atol=1e-11)


def test_total_gradient_zero_state():
    V = FunctionSpace(build_square_mesh(2), 2)
    np.testing.assert_array_equal(total_gradient_L(PLaplacian(3.0), V.zero(), 0, [1 / 3] * 3), [0.0, 0.0])


def test_interpolated_source_reproduces_quadratics():
    mesh = build_disk_mesh(1)
    f = lambda x: 1 + x[..., 0] * x[..., 1] - x[..., 1] ** 2  # noqa: E731
    src = InterpolatedSource(FunctionSpace(mesh, 2, dirichlet=False), f)
    V = FunctionSpace(mesh, 1)
    rule, x, _ = V.quadrature(5)
    cells = np.repeat(np.arange(mesh.n_triangles)[:, None], len(rule), axis=1)
    np.testing.assert_allclose(src.value(x, cells), f(x), atol=1e-13)
    g = src.gradient(x, cells)
    np.testing.assert_allclose(g[..., 0], x[..., 1], atol=1e-12)
    np.testing.assert_allclose(g[..., 1], x[..., 0] - 2 * x[..., 1], atol=1e-12)
