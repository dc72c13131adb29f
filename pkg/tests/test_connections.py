import numpy as np
import pytest
from hypothesis import given, strategies as st

from srwalks import connections as C, models, srgeom
from srwalks.errors import NotCompatibleInput
from srwalks.geodesics import hamiltonian_flow

coord = st.floats(-1.0, 1.0, allow_nan=False)
point3 = st.tuples(coord, coord, coord).map(np.array)


def test_frame_parallel_hand_values(heis):
    # nabla_{d_x} d_y = -(1/2) d_z and nabla_{d_y} d_x = +(1/2) d_z at any point
    G = heis.connections["frame-parallel"](np.array([0.2, -0.1, 0.4]))
    assert G[2, 0, 1] == pytest.approx(-0.5)
    assert G[2, 1, 0] == pytest.approx(0.5)
    T = C.torsion(heis.connections["frame-parallel"], np.zeros(3))
    np.testing.assert_allclose(T[:, 0, 1], [0, 0, -1.0])


@given(point3)
def test_adjoint_is_involution_and_swaps_indices(x):
    conn = models.get_model("twisted").connections["frame-parallel"]
    adj = C.adjoint(conn)
    np.testing.assert_array_equal(adj(x), np.swapaxes(conn(x), -1, -2))
    assert C.adjoint(adj) is conn
    np.testing.assert_allclose(C.torsion(adj, x), -C.torsion(conn, x))


def test_flat_connection_has_no_torsion():
    x = np.random.default_rng(0).standard_normal((5, 3))
    assert np.all(C.torsion(C.flat_connection(3), x) == 0)


@pytest.mark.parametrize("name", ["heisenberg", "twisted"])
def test_predicate_matrix_matches_expected(name):
    model = models.get_model(name)
    pts = model.sample_points(50, seed=1)
    for label, expected in model.expected.items():
        base = label.replace("^adj", "")
        conn = model.connections[base]
        if label.endswith("^adj"):
            conn = C.adjoint(conn)
        got = {"compatible": C.is_compatible(conn, model.structure, pts),
               "normal": C.is_normal(conn, model.structure, pts),
               "vertical_torsion": C.has_vertical_torsion(conn, model.structure, pts)}
        for pred, want in expected.items():
            assert got[pred].holds == want, (label, pred, got[pred].residual)
            if want:
                assert got[pred].residual <= 1e-8


def test_kappa_correction_postconditions(twist):
    S = twist.structure
    pts = twist.sample_points(40, seed=5)
    fp = twist.connections["frame-parallel"]
    kc = C.kappa_correction(S, fp, pts)
    assert C.is_compatible(kc, S, pts).holds
    assert C.has_vertical_torsion(kc, S, pts).holds
    assert not C.has_vertical_torsion(fp, S, pts).holds
    # vertical argument is untouched: nabla_V agrees with the reference
    x = pts[3]
    V = S.complement[0](x)
    np.testing.assert_allclose(np.einsum("ijk,j->ik", kc(x), V), np.einsum("ijk,j->ik", fp(x), V),
                               atol=1e-13)


def test_kappa_on_heisenberg_changes_nothing(heis):
    x = heis.sample_points(10, seed=2)
    np.testing.assert_allclose(heis.connections["kappa-corrected"](x), heis.connections["frame-parallel"](x),
                               atol=1e-14)


def test_kappa_rejects_incompatible_reference(twist):
    with pytest.raises(NotCompatibleInput):
        C.kappa_correction(twist.structure, C.flat_connection(3), twist.sample_points(10))


def test_normal_connection_transports_covectors_like_hamiltonian(heis):
    S = heis.structure
    x0 = np.array([0.1, -0.2, 0.3])
    p0 = np.array([0.6, -0.3, 0.8])
    adj = C.adjoint(heis.connections["frame-parallel"])
    assert C.normality_dynamic_residual(adj, S, x0, p0) < 1e-10
    assert C.normality_dynamic_residual(C.flat_connection(3), S, x0, p0) > 1e-3


def test_levi_civita_ellipsoid_matches_symbolic(ell):
    # sympy Christoffels of the c=1.5 ellipsoid metric at (s, t) = (1, 1)
    want = [[[0.0, 0.6420926159343306], [0.6420926159343306, 0.0]],
            [[-0.24118120929858633, 0.0], [0.0, 0.3014765116232329]]]
    np.testing.assert_allclose(ell.connections["levi-civita"](np.array([1.0, 1.0])), want, rtol=1e-12)


def test_levi_civita_metric_compatible_and_torsion_free(ell):
    x = ell.sample_points(30, seed=4)
    lc = ell.connections["levi-civita"]
    assert np.max(C.metric_compatibility_residual(lc, ell.metric, x)) < 1e-8
    assert np.max(np.abs(C.torsion(lc, x))) == 0


def test_levi_civita_analytic_derivative_vs_fd(ell):
    x = ell.sample_points(10, seed=8)
    lc = ell.connections["levi-civita"]
    fd = srgeom.fd_jacobian(lc.christoffels, x, h=1e-5)
    np.testing.assert_allclose(lc.gamma_derivative(x), fd, atol=1e-7)


def test_covariant_derivative_of_frame_vanishes_for_frame_parallel(twist):
    S = twist.structure
    x = np.array([0.3, 0.2, -0.1])
    conn = twist.connections["frame-parallel"]
    for X in S.frame:
        for Y in S.frame:
            np.testing.assert_allclose(C.covariant_derivative(conn, x, X, Y), 0, atol=1e-12)


def test_frame_parallel_geodesics_are_normal_geodesics(heis):
    from srwalks.geodesics import affine_geodesic
    S = heis.structure
    x = np.array([0.2, 0.1, 0.0])
    u = 0.6 * S.horizontal[0](x) - 0.8 * S.horizontal[1](x)
    a = affine_geodesic(heis.connections["frame-parallel"], x, u, 1.0, 1e-3)
    b = hamiltonian_flow(S, x, srgeom.flat_horizontal(S, x, u), 1.0, 1e-3)
    assert np.max(np.abs(a.x - b.x)) < 1e-10


@pytest.mark.parametrize("c", [1.0, 1.5, 2.0])
def test_levi_civita_against_sympy(c):
    sp = pytest.importorskip("sympy")
    s, t = sp.symbols("s t", real=True)
    phi = sp.Matrix([sp.cos(s) * sp.sin(t), sp.sin(s) * sp.sin(t), c * sp.cos(t)])
    J = phi.jacobian([s, t])
    g = J.T * J
    gi = g.inv()
    X = (s, t)
    pt = {s: 0.7, t: 2.1}
    want = np.array([[[float(sum(gi[i, l] * (sp.diff(g[l, j], X[k]) + sp.diff(g[l, k], X[j])
                                             - sp.diff(g[j, k], X[l])) for l in range(2)).subs(pt)) / 2
                       for k in range(2)] for j in range(2)] for i in range(2)])
    m = models.ellipsoid_surface(c)
    np.testing.assert_allclose(m.connections["levi-civita"](np.array([0.7, 2.1])), want, atol=1e-13)
