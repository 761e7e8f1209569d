import numpy as np
import pytest
from numpy.testing import assert_allclose

from fuse4d.rotations import (geodesic_angle, normalize_quat, project_to_rotation,
                              quat_to_rotmat, random_rotation,
                              rotmat_grad_to_quat_grad, rotmat_to_quat)


def test_identity_quat():
    R = quat_to_rotmat(np.array([1.0, 0.0, 0.0, 0.0]))
    assert_allclose(R, np.eye(3), atol=1e-15)


def test_round_trip_random():
    rng = np.random.default_rng(3)
    for _ in range(50):
        R = random_rotation(rng)
        q = rotmat_to_quat(R)
        assert_allclose(quat_to_rotmat(q), R, atol=1e-12)


def test_scale_invariance():
    rng = np.random.default_rng(4)
    q = rng.normal(size=4)
    assert_allclose(quat_to_rotmat(q), quat_to_rotmat(3.7 * q), atol=1e-13)


def test_rotmat_is_rotation_for_any_quat():
    rng = np.random.default_rng(5)
    q = rng.normal(size=(20, 4))
    R = quat_to_rotmat(q)
    eye = np.einsum('nij,nkj->nik', R, R)
    assert_allclose(eye, np.broadcast_to(np.eye(3), (20, 3, 3)), atol=1e-12)
    assert_allclose(np.linalg.det(R), np.ones(20), atol=1e-12)


def test_quat_grad_matches_finite_differences():
    rng = np.random.default_rng(6)
    eps = 1e-6
    for _ in range(20):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        G = rng.normal(size=(3, 3))

        def f(qq):
            return float(np.sum(G * quat_to_rotmat(qq)))

        analytic = rotmat_grad_to_quat_grad(q, G)
        fd = np.empty(4)
        for k in range(4):
            qp, qm = q.copy(), q.copy()
            qp[k] += eps
            qm[k] -= eps
            fd[k] = (f(qp) - f(qm)) / (2 * eps)
        assert_allclose(analytic, fd, rtol=1e-5, atol=1e-7)


def test_quat_grad_batched():
    rng = np.random.default_rng(7)
    q = rng.normal(size=(6, 4))
    G = rng.normal(size=(6, 3, 3))
    batched = rotmat_grad_to_quat_grad(q, G)
    for i in range(6):
        assert_allclose(batched[i], rotmat_grad_to_quat_grad(q[i], G[i]), atol=1e-14)


def test_project_to_rotation():
    rng = np.random.default_rng(8)
    R = random_rotation(rng)
    noisy = R + 0.05 * rng.normal(size=(3, 3))
    P = project_to_rotation(noisy)
    assert_allclose(P @ P.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(P) > 0
    assert geodesic_angle(P, R) < 0.15


def test_project_handles_reflection_side():
    M = np.diag([1.0, 1.0, -1.0])
    P = project_to_rotation(M)
    assert_allclose(np.linalg.det(P), 1.0, atol=1e-12)


def test_geodesic_angle():
    c, s = np.cos(0.3), np.sin(0.3)
    Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
    assert geodesic_angle(np.eye(3), Rz) == pytest.approx(0.3, abs=1e-12)


def test_random_rotation_angle_cap():
    rng = np.random.default_rng(9)
    for _ in range(30):
        R = random_rotation(rng, max_angle_rad=0.2)
        assert geodesic_angle(np.eye(3), R) <= 0.2 + 1e-12


def test_normalize_quat():
    q = normalize_quat(np.array([[2.0, 0, 0, 0], [0, 0, 3.0, 0]]))
    assert_allclose(np.linalg.norm(q, axis=1), [1.0, 1.0])
