from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from noetherfem.quadrature import (
    MAX_DEGREE,
    UnsupportedDegreeError,
    edge_rule,
    error_degree,
    face_degree,
    triangle_rule,
    volume_degree,
)


def test_centroid_rule_area():
    rule = triangle_rule(1)
    assert rule.weights.sum() == 0.5


def test_degree2_barycentric_product():
    rule = triangle_rule(2)
    l1, l2 = rule.points[:, 1], rule.points[:, 2]
    assert rule.weights @ (l1 * l2) == pytest.approx(1 / 24, abs=1e-15)


def test_degree4_x4():
    rule = triangle_rule(4)
    x = rule.ref_points[:, 0]
    assert rule.weights @ x**4 == pytest.approx(1 / 30, abs=1e-15)


def test_edge_rules():
    assert edge_rule(1).weights @ np.ones(len(edge_rule(1))) == 1.0
    r3, r5 = edge_rule(3), edge_rule(5)
    assert abs(r3.weights @ r3.points**3 - 0.25) <= 1e-15
    assert abs(r5.weights @ r5.points**5 - 1 / 6) <= 1e-15


@pytest.mark.parametrize("deg", [0, MAX_DEGREE + 1, 2.0, -3])
def test_unsupported_degree(deg):
    with pytest.raises(UnsupportedDegreeError):
        triangle_rule(deg)
    with pytest.raises(UnsupportedDegreeError):
        edge_rule(deg)


def test_rule_shapes():
    for d in range(1, MAX_DEGREE + 1):
        rule = triangle_rule(d)
        assert rule.exact_degree >= d
        np.testing.assert_allclose(rule.points.sum(axis=1), 1.0, atol=1e-15)
        assert np.all(rule.points >= -1e-15)
        assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)


def test_default_degrees():
    assert [volume_degree(k) for k in (1, 2, 3)] == [5, 7, 9]
    assert [face_degree(k) for k in (1, 2, 3)] == [4, 6, 8]
    assert [error_degree(k) for k in (1, 2, 3)] == [6, 8, 10]


@given(
    deg=st.integers(1, MAX_DEGREE),
    corners=st.lists(st.floats(-3, 3), min_size=6, max_size=6),
    data=st.data(),
)
def test_exact_on_affine_images(deg, corners, data):
    P = np.array(corners).reshape(3, 2)
    B = np.column_stack([P[1] - P[0], P[2] - P[0]])
    det = np.linalg.det(B)
    if abs(det) < 1e-2:
        return
    a = data.draw(st.integers(0, deg))
    b = data.draw(st.integers(0, deg - a))
    rule = triangle_rule(deg)
    # pull back x^a y^b on the reference triangle, then map forward
    ref = rule.ref_points
    x = P[0] + ref @ B.T
    quad = abs(det) * rule.weights @ (x[:, 0] ** a * x[:, 1] ** b)
    # oracle: expand in barycentric monomials via a high-degree reference rule
    hi = triangle_rule(MAX_DEGREE)
    xh = P[0] + hi.ref_points @ B.T
    oracle = abs(det) * hi.weights @ (xh[:, 0] ** a * xh[:, 1] ** b)
    assert quad == pytest.approx(oracle, rel=1e-12, abs=1e-12)


@given(deg=st.integers(1, MAX_DEGREE), data=st.data())
def test_reference_monomials(deg, data):
    a = data.draw(st.integers(0, deg))
    b = data.draw(st.integers(0, deg - a))
    rule = triangle_rule(deg)
    x, y = rule.ref_points.T
    exact = factorial(a) * factorial(b) / factorial(a + b + 2)
    assert rule.weights @ (x**a * y**b) == pytest.approx(exact, rel=1e-12)
