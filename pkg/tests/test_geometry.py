import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from rvoxelmap import (Pose, PoseCov, WorldPoint, lidar_point_covariance,
                       lidar_point_covariances, quaternion_to_rotation,
                       rotation_to_quaternion, skew, skew_batch, so3_exp,
                       so3_log, transform_point, transform_points)
from conftest import random_psd, random_rotation

vec3 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=3, max_size=3)


def test_skew_zero():
    assert_allclose(skew(np.zeros(3)), np.zeros((3, 3)))


def test_skew_canonical_basis():
    expected = np.array([[0, 0, 0], [0, 0, -1], [0, 1, 0]], dtype=float)
    assert_allclose(skew(np.array([1.0, 0.0, 0.0])), expected)


def test_skew_matches_hand_cross_product():
    v = np.array([1.0, 2.0, 3.0])
    w = np.array([4.0, 5.0, 6.0])
    assert_allclose(skew(v) @ w, np.array([-3.0, 6.0, -3.0]))


@given(vec3, vec3)
def test_skew_is_cross_product(v, w):
    v = np.asarray(v)
    w = np.asarray(w)
    assert_allclose(skew(v) @ w, np.cross(v, w), atol=1e-9)


def test_skew_batch_matches_scalar(rng):
    vs = rng.normal(size=(17, 3))
    batch = skew_batch(vs)
    for i in range(17):
        assert_allclose(batch[i], skew(vs[i]))


def test_so3_exp_zero_is_identity():
    assert_allclose(so3_exp(np.zeros(3)), np.eye(3))


def test_so3_exp_half_turn_about_z():
    rot = so3_exp(np.array([0.0, 0.0, math.pi / 2]))
    assert_allclose(rot @ np.array([1.0, 0.0, 0.0]),
                    np.array([0.0, 1.0, 0.0]), atol=1e-12)


@given(vec3)
def test_so3_exp_is_orthonormal(w):
    rot = so3_exp(np.asarray(w))
    assert_allclose(rot.T @ rot, np.eye(3), atol=1e-9)
    assert np.linalg.det(rot) > 0


@given(st.floats(1e-8, math.pi - 1e-3),
       st.integers(0, 10_000))
def test_so3_log_exp_round_trip(angle, axis_pick):
    axis_rng = np.random.default_rng(axis_pick)
    axis = axis_rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    w = axis * angle
    assert_allclose(so3_log(so3_exp(w)), w, atol=1e-7)


def test_so3_log_near_pi():
    w = np.array([0.8, -0.5, 0.2])
    w = w / np.linalg.norm(w) * (math.pi - 1e-8)
    rot = so3_exp(w)
    back = so3_log(rot)
    # axis sign is the only freedom left at pi
    assert min(np.linalg.norm(back - w), np.linalg.norm(back + w)) < 1e-5


def test_quaternion_round_trip(rng):
    for _ in range(50):
        rot = random_rotation(rng)
        q = rotation_to_quaternion(rot)
        assert_allclose(np.linalg.norm(q), 1.0, atol=1e-12)
        assert_allclose(quaternion_to_rotation(q), rot, atol=1e-9)


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))  # reflection


def test_pose_inverse_and_compose(rng):
    for _ in range(20):
        pose = Pose(random_rotation(rng), rng.normal(size=3))
        p = rng.normal(size=3)
        assert_allclose(pose.inverse().transform(pose.transform(p)), p,
                        atol=1e-9)
        both = pose.compose(pose.inverse())
        assert_allclose(both.rotation, np.eye(3), atol=1e-9)
        assert_allclose(both.translation, np.zeros(3), atol=1e-9)


def test_transform_point_identity_is_identity():
    p = np.array([1.0, -2.0, 3.0])
    cov = np.diag([0.1, 0.2, 0.3])
    wp = transform_point(p, cov, Pose.identity(), PoseCov.zero())
    assert_allclose(wp.position, p)
    assert_allclose(wp.cov, cov)


def test_transform_point_isotropic_cov_rotation_invariant():
    sigma2 = 0.04
    rot = so3_exp(np.array([0.0, 0.0, math.pi / 2]))
    wp = transform_point(np.array([1.0, 0.0, 0.0]), sigma2 * np.eye(3),
                         Pose(rot, np.zeros(3)), PoseCov.zero())
    assert_allclose(wp.position, np.array([0.0, 1.0, 0.0]), atol=1e-12)
    assert_allclose(wp.cov, sigma2 * np.eye(3), atol=1e-12)


def test_transform_point_covariance_monte_carlo(rng):
    """First-order covariance matches sampling of the full noisy transform."""
    pose = Pose(random_rotation(rng), rng.normal(size=3))
    p = rng.uniform(-2, 2, size=3)
    point_cov = random_psd(rng, 3, scale=1e-4)
    pose_cov = PoseCov(random_psd(rng, 3, scale=1e-4),
                       random_psd(rng, 3, scale=1e-4))
    wp = transform_point(p, point_cov, pose, pose_cov)

    m = 300_000
    dtheta = rng.multivariate_normal(np.zeros(3), pose_cov.rot_cov, size=m)
    dp = rng.multivariate_normal(np.zeros(3), point_cov, size=m)
    dt = rng.multivariate_normal(np.zeros(3), pose_cov.trans_cov, size=m)
    # batched Rodrigues: exp(w^)v = v cos + (k x v) sin + k (k.v)(1 - cos)
    v = p + dp
    angle = np.linalg.norm(dtheta, axis=1, keepdims=True)
    k = dtheta / np.where(angle < 1e-30, 1.0, angle)
    cos_a, sin_a = np.cos(angle), np.sin(angle)
    rotated = v * cos_a + np.cross(k, v) * sin_a \
        + k * np.sum(k * v, axis=1, keepdims=True) * (1.0 - cos_a)
    samples = rotated @ pose.rotation.T + pose.translation + dt
    mc_cov = np.cov(samples.T)
    assert abs(np.trace(mc_cov) - np.trace(wp.cov)) < 0.05 * np.trace(wp.cov)


def test_transform_points_matches_scalar(rng):
    pose = Pose(random_rotation(rng), rng.normal(size=3))
    pose_cov = PoseCov(random_psd(rng, 3, scale=1e-3),
                       random_psd(rng, 3, scale=1e-3))
    pts = rng.normal(size=(25, 3))
    covs = np.array([random_psd(rng, 3, scale=1e-3) for _ in range(25)])
    wpos, wcov = transform_points(pts, covs, pose, pose_cov)
    for i in range(25):
        ref = transform_point(pts[i], covs[i], pose, pose_cov)
        assert_allclose(wpos[i], ref.position, atol=1e-12)
        assert_allclose(wcov[i], ref.cov, atol=1e-12)
        assert_allclose(wcov[i], wcov[i].T, atol=1e-12)


def test_lidar_point_covariance_range_and_bearing():
    sigma_r = 0.02
    sigma_b = 0.05
    p = np.array([10.0, 0.0, 0.0])
    cov = lidar_point_covariance(p, sigma_r, sigma_b)
    assert_allclose(cov[0, 0], sigma_r ** 2, atol=1e-15)
    tang = (10.0 * math.sin(math.radians(sigma_b))) ** 2
    assert_allclose(cov[1, 1], tang, atol=1e-15)
    assert_allclose(cov[2, 2], tang, atol=1e-15)


def test_lidar_point_covariance_origin_isotropic():
    cov = lidar_point_covariance(np.zeros(3), 0.02, 0.05)
    assert_allclose(cov, 0.02 ** 2 * np.eye(3))


def test_lidar_point_covariances_matches_scalar(rng):
    pts = np.vstack([rng.normal(size=(11, 3)) * 5.0, np.zeros(3)])
    batch = lidar_point_covariances(pts, 0.02, 0.05)
    for i in range(pts.shape[0]):
        assert_allclose(batch[i], lidar_point_covariance(pts[i], 0.02, 0.05),
                        atol=1e-15)
