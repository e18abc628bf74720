import numpy as np
import pytest

from boneik import so3


def test_rot_from_6d_is_orthonormal():
    rng = np.random.default_rng(0)
    six = rng.normal(size=(500, 6))
    r = so3.rot_from_6d(six[:, :3], six[:, 3:])
    eye = np.eye(3)
    err = np.abs(np.swapaxes(r, -1, -2) @ r - eye).max()
    assert err < 1e-12
    assert np.abs(np.linalg.det(r) - 1.0).max() < 1e-12


def test_rot_from_6d_gram_schmidt_invariances():
    a1 = np.array([2.0, 0.0, 0.0])
    a2 = np.array([0.3, 5.0, 0.0])
    r = so3.rot_from_6d(a1, a2)
    assert np.allclose(r[:, 0], [1.0, 0.0, 0.0])
    assert np.allclose(r[:, 1], [0.0, 1.0, 0.0])
    # scaling a1, or adding multiples of a1 to a2, changes nothing
    r2 = so3.rot_from_6d(7.0 * a1, a2 + 3.0 * a1)
    assert np.abs(r - r2).max() < 1e-12


def test_rot_from_6d_degenerate():
    with pytest.raises(so3.DegenerateRotationInputError):
        so3.rot_from_6d(np.zeros(3), np.array([0.0, 1.0, 0.0]))
    with pytest.raises(so3.DegenerateRotationInputError):
        so3.rot_from_6d(np.array([1.0, 0.0, 0.0]), np.array([2.0, 0.0, 0.0]))


def test_axis_angle_roundtrip():
    rng = np.random.default_rng(1)
    axis = rng.normal(size=(200, 3))
    axis /= np.linalg.norm(axis, axis=-1, keepdims=True)
    angle = rng.random(200) * (np.pi - 1e-3)
    m = so3.axis_angle_to_matrix(axis, angle)
    axis2, angle2 = so3.matrix_to_axis_angle(m)
    m2 = so3.axis_angle_to_matrix(axis2, angle2)
    assert np.abs(m - m2).max() < 1e-10


def test_axis_angle_near_pi():
    axis = np.array([0.6, 0.8, 0.0])
    for angle in (np.pi - 1e-8, np.pi):
        m = so3.axis_angle_to_matrix(axis, angle)
        a2, t2 = so3.matrix_to_axis_angle(m)
        m2 = so3.axis_angle_to_matrix(a2, t2)
        assert np.abs(m - m2).max() < 1e-6


def test_axis_angle_zero():
    a, t = so3.matrix_to_axis_angle(np.eye(3))
    assert t == 0.0
    assert np.isfinite(a).all()


def test_quat_matrix_roundtrip():
    rng = np.random.default_rng(2)
    m = so3.random_rotation(rng, np.pi, count=300)
    q = so3.matrix_to_quat(m)
    assert np.all(q[:, 0] >= 0.0)
    assert np.abs(np.linalg.norm(q, axis=-1) - 1.0).max() < 1e-12
    m2 = so3.quat_to_matrix(q)
    assert np.abs(m - m2).max() < 1e-12


def test_quat_to_matrix_normalizes():
    q = np.array([2.0, 0.0, 0.0, 0.0])
    assert np.allclose(so3.quat_to_matrix(q), np.eye(3))


def test_geodesic_known_angle():
    a = np.eye(3)
    b = so3.axis_angle_to_matrix(np.array([0.0, 0.0, 1.0]), 0.7)
    assert so3.geodesic(a, b) == pytest.approx(0.7, abs=1e-12)


def test_geodesic_batch_shape():
    rng = np.random.default_rng(3)
    a = so3.random_rotation(rng, np.pi, count=12).reshape(3, 4, 3, 3)
    b = so3.random_rotation(rng, np.pi, count=12).reshape(3, 4, 3, 3)
    d = so3.geodesic(a, b)
    assert d.shape == (3, 4)
    assert np.all(d >= 0.0) and np.all(d <= np.pi + 1e-12)


def test_random_rotation_respects_cap():
    rng = np.random.default_rng(4)
    m = so3.random_rotation(rng, 0.3, count=500)
    _, angle = so3.matrix_to_axis_angle(m)
    assert angle.max() <= 0.3 + 1e-12
    with pytest.raises(ValueError):
        so3.random_rotation(rng, 0.0)
    with pytest.raises(ValueError):
        so3.random_rotation(rng, 3.5)


def test_axis_errors_zero_on_identity():
    m = np.eye(3)[None].repeat(5, axis=0)
    sw, tw = so3.axis_errors(m, m)
    assert np.abs(sw).max() < 1e-12
    assert np.abs(tw).max() < 1e-12


def test_is_rotation():
    assert so3.is_rotation(np.eye(3))
    assert not so3.is_rotation(2.0 * np.eye(3))
    assert not so3.is_rotation(np.diag([1.0, 1.0, -1.0]))
