import numpy as np
import pytest
from hypothesis import given, strategies as st

from srwalks import models, srgeom
from srwalks.errors import NotHorizontal, OutOfDomain, SingularFrame
from srwalks.srgeom import ScalarFieldSpec, SubRiemannianStructure, VectorFieldSpec

coord = st.floats(-1.0, 1.0, allow_nan=False)
point3 = st.tuples(coord, coord, coord).map(np.array)


def test_heisenberg_full_frame_and_cometric(heis):
    x = np.array([1.0, 2.0, 0.0])
    W = srgeom.full_frame_matrix(heis.structure, x)
    np.testing.assert_allclose(W, [[1, 0, 0], [0, 1, 0], [-1.0, 0.5, 1]])
    g = srgeom.cometric(heis.structure, x)
    np.testing.assert_allclose(g, [[1, 0, -1], [0, 1, 0.5], [-1, 0.5, 1.25]])


def test_heisenberg_dual_christoffels_hand_values(heis):
    x = np.array([0.4, -0.8, 0.1])
    G = srgeom.dual_christoffels(heis.structure, x)
    # g^{13} = -y/2, g^{33} = (x^2+y^2)/4
    assert G[0, 2, 1] == pytest.approx(-0.25)
    assert G[2, 2, 0] == pytest.approx(x[0] / 4)
    assert G[2, 2, 1] == pytest.approx(x[1] / 4)
    np.testing.assert_array_equal(G, np.swapaxes(G, 0, 1))


def test_heisenberg_bracket_and_divergence(heis):
    S = heis.structure
    x = np.array([0.3, -0.2, 0.7])
    np.testing.assert_allclose(srgeom.lie_bracket(S, x, *S.horizontal), [0, 0, 1], atol=1e-14)
    for E in S.horizontal:
        assert abs(srgeom.horizontal_divergence(S, x, E)) < 1e-14


def test_twisted_bracket_has_horizontal_part(twist):
    S = twist.structure
    x = np.array([0.2, 0.1, -0.3])
    br = srgeom.lie_bracket(S, x, *S.horizontal)
    np.testing.assert_allclose(br, [0, 0.3, 1.0], atol=1e-14)
    assert np.linalg.norm(srgeom.project_horizontal(S, x, br)) > 0.1


def test_sub_laplacian_quadratic_heisenberg(heis):
    pts = heis.base_points
    np.testing.assert_allclose(srgeom.sub_laplacian(heis.structure, pts, models.quad_xy()), 4.0, atol=1e-12)
    np.testing.assert_allclose(srgeom.sub_laplacian_literal(heis.structure, pts, models.quad_xy()), 4.0,
                               atol=1e-12)


def test_sub_laplacian_bump_matches_symbolic(heis):
    # sympy: E1(E1 f) + E2(E2 f) for the radius-2 bump at (0.3, -0.4, 0.5)
    val = srgeom.sub_laplacian(heis.structure, np.array([0.3, -0.4, 0.5]), models.bump())
    assert val == pytest.approx(-1.2412853891466573, rel=1e-8)


def test_euclidean_sub_laplacian_is_laplacian():
    S = models.get_model("euclidean3").structure
    f = ScalarFieldSpec(lambda x: np.sin(x[..., 0]) * x[..., 1] ** 2 + x[..., 2] ** 3)
    x = np.array([0.3, 0.5, -0.2])
    expect = -np.sin(0.3) * 0.25 + 2 * np.sin(0.3) + 6 * -0.2
    assert srgeom.sub_laplacian(S, x, f) == pytest.approx(expect, abs=1e-5)


@given(point3)
def test_sub_laplacian_two_routes_agree(x):
    for name in ("heisenberg", "twisted"):
        S = models.get_model(name).structure
        f = models.bump()
        a = srgeom.sub_laplacian(S, x, f)
        b = srgeom.sub_laplacian_literal(S, x, f)
        assert a == pytest.approx(b, rel=1e-7, abs=1e-9)


@given(point3, st.floats(-3, 3), st.floats(-3, 3))
def test_flat_then_sharp_is_identity_on_horizontal(x, a, b):
    S = models.get_model("twisted").structure
    u = a * S.horizontal[0](x) + b * S.horizontal[1](x)
    p = srgeom.flat_horizontal(S, x, u)
    np.testing.assert_allclose(srgeom.sharp(S, x, p), u, atol=1e-12)
    # p annihilates the complement
    assert abs(p @ S.complement[0](x)) < 1e-12


def test_flat_rejects_vertical(heis):
    with pytest.raises(NotHorizontal):
        srgeom.flat_horizontal(heis.structure, np.zeros(3), np.array([0.0, 0.0, 1.0]))


def test_domain_and_singular_frame_errors(twist):
    with pytest.raises(OutOfDomain):
        srgeom.cometric(twist.structure, np.array([5.0, 0, 0]))
    degenerate = SubRiemannianStructure(
        2, (VectorFieldSpec.constant([1.0, 0.0]),), (VectorFieldSpec.constant([1.0, 0.0]),))
    with pytest.raises(SingularFrame):
        srgeom.full_frame_matrix(degenerate, np.zeros(2))


@given(point3)
def test_horizontal_norm_of_frame_vectors(x):
    S = models.get_model("heisenberg").structure
    for E in S.horizontal:
        assert srgeom.horizontal_norm(S, x, E(x)) == pytest.approx(1.0, abs=1e-13)


def test_fd_jacobian_matches_analytic(twist):
    x = twist.sample_points(10, seed=3)
    for E in twist.structure.horizontal:
        np.testing.assert_allclose(srgeom.fd_jacobian(E.value, x), E.jac(x), atol=1e-8)
