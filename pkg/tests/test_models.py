import numpy as np
import pytest

from srwalks import connections as C, models, srgeom
from srwalks.errors import PoleProximity


@pytest.mark.parametrize("name", ["heisenberg", "twisted", "ellipsoid", "euclidean3"])
def test_analytic_jacobians_agree_with_fd(name):
    m = models.get_model(name)
    x = m.sample_points(100, seed=11)
    for E in m.structure.frame:
        np.testing.assert_allclose(E.jac(x), srgeom.fd_jacobian(E.value, x), atol=1e-6)


def test_registry_lists_entries_on_unknown():
    with pytest.raises(KeyError, match="heisenberg"):
        models.get_model("sphere")
    assert models.get_model("euclidean4").n == 4
    assert set(models.registry_names()) >= {"heisenberg", "twisted", "ellipsoid", "ellipsoid-frames"}


def test_heisenberg_complement_preserves_metric(heis):
    x = heis.sample_points(20, seed=0)
    assert np.max(models.metric_preserving_residual(heis.structure, x)) <= 1e-10


def test_ellipsoid_equator_metric(ell):
    np.testing.assert_allclose(ell.metric(np.array([0.7, np.pi / 2])), np.diag([1.0, 2.25]), atol=1e-15)


def test_gaussian_curvature(ell):
    lc = ell.connections["levi-civita"]
    # Brioschi formula via sympy: K(1, 1) and K at the equator (= 1/c^2)
    assert models.gaussian_curvature(lc, ell.metric, np.array([1.0, 1.0])) == pytest.approx(0.6331659069263689,
                                                                                             rel=1e-10)
    assert models.gaussian_curvature(lc, ell.metric, np.array([0.0, np.pi / 2])) == pytest.approx(4 / 9)
    sph = models.ellipsoid_surface(1.0)
    K = models.gaussian_curvature(sph.connections["levi-civita"], sph.metric, sph.sample_points(10))
    np.testing.assert_allclose(K, 1.0, rtol=1e-10)


def test_equator_is_geodesic(ell):
    from srwalks.geodesics import affine_geodesic
    path = affine_geodesic(ell.connections["levi-civita"], np.array([0.0, np.pi / 2]), np.array([1.0, 0.0]),
                           3.0, 1e-2)
    assert np.max(np.abs(path.x[:, 1] - np.pi / 2)) < 1e-14


def test_pole_band(ell):
    with pytest.raises(PoleProximity):
        srgeom.cometric(ell.structure, np.array([0.0, 0.01]))
    assert ell.structure.wrap(np.array([7.0, 1.0]))[0] == pytest.approx(7.0 - 2 * np.pi)


def test_initial_frame_in_anisotropic_bundle(ellf):
    from srwalks.retractions import frame_orthonormality_residual
    F = ellf.initial_frame()
    assert frame_orthonormality_residual(ellf.metric, ellf.start, F, ellf.anisotropy) < 1e-14
    assert np.linalg.norm(F[:, 0]) == pytest.approx(4.0)


def test_ellipsoid_frame_is_orthonormal(ell):
    x = ell.sample_points(20)
    W = srgeom.frame_matrix(ell.structure, x)
    g = ell.metric(x)
    np.testing.assert_allclose(np.swapaxes(W, -1, -2) @ g @ W, np.broadcast_to(np.eye(2), g.shape), atol=1e-13)


def test_ellipsoid_sub_laplacian_is_laplace_beltrami(ell):
    # Laplace-Beltrami of cos t on the ellipsoid, by hand from sqrt(det g) = sin t sqrt(g_tt)
    f = srgeom.ScalarFieldSpec(lambda x: np.cos(x[..., 1]))
    x = np.array([0.3, 1.1])
    c2 = 2.25
    t = 1.1

    def flux(t):
        gtt = 1 + (c2 - 1) * np.sin(t) ** 2
        return np.sin(t) * np.sqrt(gtt) * (-np.sin(t)) / gtt

    h = 1e-5
    lb = (flux(t + h) - flux(t - h)) / (2 * h) / (np.sin(t) * np.sqrt(1 + (c2 - 1) * np.sin(t) ** 2))
    assert srgeom.sub_laplacian(ell.structure, x, f) == pytest.approx(lb, rel=1e-5)


def test_twisted_domain(twist):
    assert twist.structure.contains(np.array([3.0, 0, 0]))
    assert not twist.structure.contains(np.array([3.4, 0, 0]))


def test_euclidean_connections_are_flat():
    m = models.get_model("euclidean2")
    x = m.sample_points(5)
    for conn in m.connections.values():
        assert np.all(conn(x) == 0)
    assert np.all(C.torsion(m.connections["flat"], x) == 0)
