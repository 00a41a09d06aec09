import numpy as np
import pytest

from capflow import geometry
from capflow.errors import SingularPoint

TOL = geometry.TOL_GEOM


def random_ball_points(rng, count, dim=3, rmax=0.999):
    x = rng.normal(size=(count, dim))
    x /= np.linalg.norm(x, axis=1)[:, None]
    return x * rng.uniform(0.0, rmax, count)[:, None]


def test_xe_field_at_origin():
    e = geometry.axis_vector(3)
    np.testing.assert_allclose(geometry.xe_field(np.zeros(3)), -0.5 * e, atol=1e-15)


def test_xe_field_vanishes_at_poles():
    e = geometry.axis_vector(3)
    assert np.abs(geometry.xe_field(e)).max() < 1e-15
    assert np.abs(geometry.xe_field(-e)).max() < 1e-15


def test_xe_field_tangential_on_sphere():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10_000, 3))
    x /= np.linalg.norm(x, axis=1)[:, None]
    dots = np.sum(geometry.xe_field(x) * x, axis=1)
    assert np.abs(dots).max() < 1e-14


def test_xe_field_general_direction():
    # rotating e to the axis commutes with the field
    rng = np.random.default_rng(3)
    e = rng.normal(size=3)
    e /= np.linalg.norm(e)
    R = geometry.rotation_to_axis(e)
    np.testing.assert_allclose(R @ e, geometry.axis_vector(3), atol=1e-12)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
    x = random_ball_points(rng, 50)
    lhs = geometry.xe_field(x, e) @ R.T
    rhs = geometry.xe_field(x @ R.T)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_to_halfspace_center():
    p = geometry.to_halfspace(np.zeros(3))
    assert abs(p.rho - 1.0) < TOL
    assert abs(p.beta) < TOL


def test_to_halfspace_antipode_maps_to_origin():
    p = geometry.to_halfspace(-geometry.axis_vector(3))
    assert abs(p.rho) < TOL


def test_to_halfspace_equatorial_plane_is_unit_sphere():
    rng = np.random.default_rng(1)
    x = np.zeros((200, 3))
    x[:, :2] = rng.normal(size=(200, 2))
    x[:, :2] *= (rng.uniform(0, 0.99, 200) / np.linalg.norm(x[:, :2], axis=1))[:, None]
    p = geometry.to_halfspace(x)
    np.testing.assert_allclose(p.rho, 1.0, atol=1e-12)


def test_to_halfspace_singular_point():
    with pytest.raises(SingularPoint):
        geometry.to_halfspace(geometry.axis_vector(3))


def test_to_ball_special_points():
    p = geometry.HalfSpacePolar(rho=np.array(1.0), beta=np.array(0.0),
                                xi=np.array([1.0, 0.0]))
    np.testing.assert_allclose(geometry.to_ball(p), np.zeros(3), atol=1e-14)
    p0 = geometry.HalfSpacePolar(rho=np.array(0.0), beta=np.array(0.3),
                                 xi=np.array([1.0, 0.0]))
    np.testing.assert_allclose(geometry.to_ball(p0), -geometry.axis_vector(3), atol=1e-14)


def test_round_trip_many_points():
    rng = np.random.default_rng(2)
    x = random_ball_points(rng, 10_000)
    # keep away from the singular point e
    keep = np.linalg.norm(x - geometry.axis_vector(3), axis=1) > 1e-3
    x = x[keep]
    x2 = geometry.to_ball(geometry.to_halfspace(x))
    assert np.abs(x2 - x).max() < 10 * TOL


def test_boundary_preservation():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(500, 3))
    x /= np.linalg.norm(x, axis=1)[:, None]
    keep = np.linalg.norm(x - geometry.axis_vector(3), axis=1) > 1e-2
    p = geometry.to_halfspace(x[keep])
    assert np.abs(p.beta - 0.5 * np.pi).max() < 1e-8
    y = geometry.to_ball(p)
    assert np.abs(np.linalg.norm(y, axis=1) - 1.0).max() < TOL


def test_conformal_factor_values():
    assert abs(geometry.conformal_factor(1.0, 0.5 * np.pi) - 1.0) < 1e-15
    assert abs(geometry.conformal_factor(1.0, 0.0) - 0.5) < 1e-15


def test_conformal_factor_matches_ball_expression():
    rng = np.random.default_rng(5)
    x = random_ball_points(rng, 2000)
    p = geometry.to_halfspace(x)
    ratio = geometry.conformal_factor(p.rho, p.beta) / geometry.conformal_factor_ball(x)
    assert np.abs(ratio - 1.0).max() < 1e-10


def test_conformality_sampled():
    # the Jacobian maps random orthonormal pairs to orthogonal equal-length pairs
    rng = np.random.default_rng(6)
    eps = 1e-5
    for _ in range(20):
        x = random_ball_points(rng, 1, rmax=0.9)[0]
        a = rng.normal(size=3)
        a /= np.linalg.norm(a)
        b = rng.normal(size=3)
        b -= (b @ a) * a
        b /= np.linalg.norm(b)

        def phi(pt):
            p = geometry.to_halfspace(pt)
            return np.array([p.rho * np.sin(p.beta) * p.xi[0],
                             p.rho * np.sin(p.beta) * p.xi[1],
                             p.rho * np.cos(p.beta)])

        da = (phi(x + eps * a) - phi(x - eps * a)) / (2 * eps)
        db = (phi(x + eps * b) - phi(x - eps * b)) / (2 * eps)
        la, lb = np.linalg.norm(da), np.linalg.norm(db)
        assert abs(la / lb - 1.0) < 1e-6
        assert abs(da @ db) / (la * lb) < 1e-6
