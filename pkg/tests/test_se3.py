import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spartn.se3 import (
    NoiseParams, Transform, axis_angle, camera_from_ee, compose, corrective_action,
    from_euler, gimbal_locked, inverse, is_rotation, orthonormality_error,
    orthonormalize, perturb_pose, random_rotation, random_transform, rotation_angle,
    sample_perturbation, to_euler, transform_from_params, transform_to_params,
)

angle = st.floats(-math.pi + 1e-6, math.pi, allow_nan=False)
small = st.floats(-1.0, 1.0, allow_nan=False)


def rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def homog(t: Transform):
    m = np.eye(4)
    m[:3, :3] = t.rotation
    m[:3, 3] = t.translation
    return m


def test_from_euler_matches_elementary_product():
    rng = np.random.default_rng(0)
    for e in rng.uniform(-3, 3, (50, 3)):
        ref = rz(e[2]) @ ry(e[1]) @ rx(e[0])
        np.testing.assert_allclose(from_euler(e), ref, atol=1e-14)


def test_compose_matches_homogeneous_product():
    rng = np.random.default_rng(1)
    a, b = random_transform(rng), random_transform(rng)
    np.testing.assert_allclose((a @ b).matrix(), homog(a) @ homog(b), atol=1e-14)


def test_inverse_of_translation_only():
    t = Transform.from_translation([1.0, 2.0, 3.0])
    assert inverse(t).allclose(Transform.from_translation([-1.0, -2.0, -3.0]), 0)


def test_quarter_turn_about_z():
    r = from_euler([0.0, 0.0, math.pi / 2])
    np.testing.assert_allclose(r @ [1.0, 0, 0], [0, 1.0, 0], atol=1e-15)


def test_group_laws_batched():
    rng = np.random.default_rng(2)
    n = 20000
    a, b, c = (random_transform(rng, n) for _ in range(3))
    lhs = compose(compose(a, b), c)
    rhs = compose(a, compose(b, c))
    assert lhs.allclose(rhs, 1e-12)
    eye = Transform.identity((n,))
    assert compose(a, inverse(a)).allclose(eye, 1e-12)
    assert compose(inverse(a), a).allclose(eye, 1e-12)
    assert compose(a, eye).allclose(a, 0)


@settings(max_examples=300, deadline=None)
@given(angle, st.floats(-math.pi / 2 + 1e-3, math.pi / 2 - 1e-3), angle)
def test_euler_round_trip(roll, pitch, yaw):
    e = np.array([roll, pitch, yaw])
    back = to_euler(from_euler(e))
    np.testing.assert_allclose(back, e, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_to_euler_then_back_reproduces_rotation(seed):
    r = random_rotation(np.random.default_rng(seed))
    np.testing.assert_allclose(from_euler(to_euler(r)), r, atol=1e-12)


def test_gimbal_lock_yaw_pinned_to_zero():
    r = from_euler([0.3, math.pi / 2, 0.7])
    e, flag = to_euler(r, with_flag=True)
    assert bool(flag)
    assert e[2] == 0.0
    np.testing.assert_allclose(from_euler(e), r, atol=1e-12)
    assert not bool(gimbal_locked(from_euler([0.3, 0.2, 0.7])))


def test_compose_repairs_drift():
    rng = np.random.default_rng(3)
    a = random_transform(rng)
    bad = Transform(a.rotation * (1 + 1e-5), a.translation)
    out = compose(bad, Transform.identity())
    assert orthonormality_error(out.rotation) < 1e-12
    assert is_rotation(orthonormalize(a.rotation * 1.01))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5), st.floats(0.0, 0.05))
def test_corrective_invariance(seed, alpha, beta):
    rng = np.random.default_rng(seed)
    t, a = random_transform(rng), random_transform(rng, scale=0.05)
    eps = sample_perturbation(NoiseParams(alpha, beta), rng)
    lhs = compose(perturb_pose(t, eps), corrective_action(eps, a))
    assert lhs.allclose(compose(t, a), 1e-12)


def test_zero_noise_is_identity():
    rng = np.random.default_rng(4)
    eps = sample_perturbation(NoiseParams(0.0, 0.0), rng, 10)
    assert eps.allclose(Transform.identity((10,)), 0)


def test_perturbation_components_uniform_in_bounds():
    rng = np.random.default_rng(5)
    p = NoiseParams(0.2, 0.003)
    eps = sample_perturbation(p, rng, 20000)
    ang = to_euler(eps.rotation)
    assert np.all(np.abs(ang) <= 0.2 + 1e-12)
    assert np.all(np.abs(eps.translation) <= 0.003)
    # U(-a, a) has variance a^2 / 3
    np.testing.assert_allclose(ang.var(axis=0), 0.2**2 / 3, rtol=0.05)
    np.testing.assert_allclose(eps.translation.var(axis=0), 0.003**2 / 3, rtol=0.05)


def test_noise_params_reject_negative():
    with pytest.raises(ValueError):
        NoiseParams(-0.1, 0.0)


def test_camera_from_ee_is_composition():
    rng = np.random.default_rng(6)
    w, e = random_transform(rng), random_transform(rng)
    np.testing.assert_allclose(camera_from_ee(w, e).matrix(), homog(w) @ homog(e), atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(small, small, small, st.floats(0.0, 3.0))
def test_axis_angle_geodesic(x, y, z, theta):
    if abs(x) + abs(y) + abs(z) < 1e-3:
        return
    r = axis_angle([x, y, z], theta)
    assert is_rotation(r)
    assert abs(rotation_angle(r) - theta) < 1e-6


def test_params_round_trip():
    rng = np.random.default_rng(7)
    p = np.concatenate([rng.uniform(-1, 1, (100, 3)), rng.uniform(-1, 1, (100, 3))], axis=1)
    np.testing.assert_allclose(transform_to_params(transform_from_params(p)), p, atol=1e-12)


def test_row12_round_trip():
    rng = np.random.default_rng(8)
    t = random_transform(rng, 5)
    assert Transform.from_row12(t.row12()).allclose(t, 0)
    assert Transform.from_matrix(t.matrix()).allclose(t, 0)


def test_bad_shapes_rejected():
    with pytest.raises(ValueError):
        Transform(np.eye(2), np.zeros(3))
