"""Foundational 3D types and the uncertainty-propagating frame transform.

Conventions used throughout the package:
  - rotations are 3x3 orthonormal matrices with det = +1;
  - rotation uncertainty lives in the tangent space of a right perturbation,
    R_true = R_est @ exp(skew(delta_theta));
  - covariances are symmetric positive semi-definite 3x3 matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ORTHONORMALITY_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = v
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def skew_batch(vs: np.ndarray) -> np.ndarray:
    """skew() applied to each row of an (N, 3) array, returning (N, 3, 3)."""
    n = vs.shape[0]
    out = np.zeros((n, 3, 3))
    out[:, 0, 1] = -vs[:, 2]
    out[:, 0, 2] = vs[:, 1]
    out[:, 1, 0] = vs[:, 2]
    out[:, 1, 2] = -vs[:, 0]
    out[:, 2, 0] = -vs[:, 1]
    out[:, 2, 1] = vs[:, 0]
    return out


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector (radians)."""
    angle = float(np.linalg.norm(w))
    w_hat = skew(w)
    if angle < 1e-9:
        # second-order series keeps orthonormality to machine precision here
        return np.eye(3) + w_hat + 0.5 * (w_hat @ w_hat)
    s = math.sin(angle) / angle
    c = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + s * w_hat + c * (w_hat @ w_hat)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of an orthonormal matrix; inverse of so3_exp."""
    cos_angle = min(1.0, max(-1.0, 0.5 * (np.trace(rot) - 1.0)))
    angle = math.acos(cos_angle)
    if angle < 1e-9:
        return 0.5 * np.array([rot[2, 1] - rot[1, 2],
                               rot[0, 2] - rot[2, 0],
                               rot[1, 0] - rot[0, 1]])
    if math.pi - angle < 1e-6:
        # near pi the antisymmetric part vanishes; recover axis from diagonal
        diag = np.diag(rot)
        k = int(np.argmax(diag))
        axis = np.zeros(3)
        axis[k] = math.sqrt(max(0.0, (diag[k] + 1.0) * 0.5))
        i, j = (k + 1) % 3, (k + 2) % 3
        axis[i] = rot[k, i] / (2.0 * axis[k])
        axis[j] = rot[k, j] / (2.0 * axis[k])
        return axis * angle
    scale = angle / (2.0 * math.sin(angle))
    return scale * np.array([rot[2, 1] - rot[1, 2],
                             rot[0, 2] - rot[2, 0],
                             rot[1, 0] - rot[0, 1]])


def rotation_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) of a rotation matrix."""
    t = np.trace(rot)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        qw = 0.25 * s
        qx = (rot[2, 1] - rot[1, 2]) / s
        qy = (rot[0, 2] - rot[2, 0]) / s
        qz = (rot[1, 0] - rot[0, 1]) / s
    else:
        k = int(np.argmax(np.diag(rot)))
        i, j = (k + 1) % 3, (k + 2) % 3
        s = math.sqrt(rot[k, k] - rot[i, i] - rot[j, j] + 1.0) * 2.0
        q = np.empty(4)
        q[k] = 0.25 * s
        q[i] = (rot[i, k] + rot[k, i]) / s
        q[j] = (rot[j, k] + rot[k, j]) / s
        q[3] = (rot[j, i] - rot[i, j]) / s
        qx, qy, qz, qw = q
    q = np.array([qx, qy, qz, qw])
    return q / np.linalg.norm(q)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion (qx, qy, qz, qw)."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: p_world = rotation @ p_local + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        trans = np.asarray(self.translation, dtype=float).reshape(3)
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err > ORTHONORMALITY_TOL:
            raise ValueError(f"rotation not orthonormal (error {err:.3e})")
        if np.linalg.det(rot) < 0.0:
            raise ValueError("rotation has negative determinant")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def transform(self, p: np.ndarray) -> np.ndarray:
        return self.rotation @ p + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -(rt @ self.translation))

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other: (self * other)(p) = self(other(p))."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class PoseCov:
    """Pose uncertainty: rotation block in tangent space (rad^2), translation
    block in m^2."""

    rot_cov: np.ndarray
    trans_cov: np.ndarray

    @staticmethod
    def zero() -> "PoseCov":
        return PoseCov(np.zeros((3, 3)), np.zeros((3, 3)))


@dataclass(frozen=True)
class WorldPoint:
    """A world-frame point carrying its 3x3 position covariance."""

    position: np.ndarray
    cov: np.ndarray


def transform_point(lidar_point: np.ndarray, point_cov: np.ndarray,
                    pose: Pose, pose_cov: PoseCov) -> WorldPoint:
    """Map a sensor-frame point and covariance into the world frame.

    The output covariance propagates, to first order, the point noise, the
    rotation tangent noise (right perturbation), and the translation noise:

        cov = R S R^T + R [p]x Sigma_R [p]x^T R^T + Sigma_t

    with p the sensor-frame point and S its sensor-frame covariance.
    """
    rot = pose.rotation
    p_hat = skew(lidar_point)
    position = rot @ lidar_point + pose.translation
    cov = (rot @ point_cov @ rot.T
           + rot @ p_hat @ pose_cov.rot_cov @ p_hat.T @ rot.T
           + pose_cov.trans_cov)
    cov = 0.5 * (cov + cov.T)
    return WorldPoint(position, cov)


def transform_points(points: np.ndarray, covs: np.ndarray,
                     pose: Pose, pose_cov: PoseCov) -> tuple[np.ndarray, np.ndarray]:
    """Batch transform_point over (N, 3) points and (N, 3, 3) covariances."""
    rot = pose.rotation
    positions = points @ rot.T + pose.translation
    hats = skew_batch(points)
    # R (S + [p]x Sigma_R [p]x^T) R^T + Sigma_t, one einsum pass per term
    mid = covs + np.einsum("nab,bc,ndc->nad", hats, pose_cov.rot_cov, hats)
    out = np.einsum("ab,nbc,dc->nad", rot, mid, rot) + pose_cov.trans_cov
    out = 0.5 * (out + np.transpose(out, (0, 2, 1)))
    return positions, out


def lidar_point_covariance(point: np.ndarray, range_sigma: float,
                           bearing_sigma_deg: float) -> np.ndarray:
    """Range/bearing sensor noise converted to a Cartesian 3x3 covariance.

    Range noise acts along the beam direction, bearing noise in the tangent
    plane with standard deviation r * sin(sigma_b).
    """
    r = float(np.linalg.norm(point))
    if r < 1e-9:
        return (range_sigma ** 2) * np.eye(3)
    d = point / r
    dd = np.outer(d, d)
    tangential = (r * math.sin(math.radians(bearing_sigma_deg))) ** 2
    return (range_sigma ** 2) * dd + tangential * (np.eye(3) - dd)


def lidar_point_covariances(points: np.ndarray, range_sigma: float,
                            bearing_sigma_deg: float) -> np.ndarray:
    """Batch lidar_point_covariance, (N, 3) -> (N, 3, 3)."""
    r = np.linalg.norm(points, axis=1)
    safe_r = np.where(r < 1e-9, 1.0, r)
    d = points / safe_r[:, None]
    dd = np.einsum("ni,nj->nij", d, d)
    tangential = (safe_r * math.sin(math.radians(bearing_sigma_deg))) ** 2
    out = (range_sigma ** 2) * dd + tangential[:, None, None] * (np.eye(3) - dd)
    out[r < 1e-9] = (range_sigma ** 2) * np.eye(3)
    return out
