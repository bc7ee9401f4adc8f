"""Scan-to-map LiDAR odometry.

Constant-velocity prediction, probabilistic point-to-plane matching against
the voxel map, and an iterated Gauss-Newton MAP update that fuses the
stacked point-to-plane residuals with the motion prior. The error state is
a 6-vector (rotation tangent first, then translation) with the rotation
applied as a right perturbation, matching the conventions in `geometry`.
"""
from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, InsufficientMatches
from .geometry import (Pose, PoseCov, WorldPoint, lidar_point_covariances,
                       so3_exp, so3_log, transform_points)
from .timing import StageTimer, maybe_stage
from .voxel_map import MapConfig, VoxelKey, VoxelMap

log = logging.getLogger("rvoxelmap")

_SQRT_2PI = math.sqrt(2.0 * math.pi)


@dataclass
class OdometryConfig:
    """Estimator knobs. Process noise is a rate (per second of predicted
    motion); sigma2_floor keeps residual variances away from zero for
    noiseless or fully converged geometry."""

    downsample: float = 0.5
    max_iterations: int = 3
    convergence_delta: float = 1e-6
    max_match_dist: float = 0.5
    sigma_gate: float = 3.0
    min_match_ratio: float = 0.1
    sigma2_floor: float = 1e-9
    process_noise_rot: float = 0.01
    process_noise_trans: float = 0.1
    scan_dt: float = 0.1
    range_sigma: float = 0.02
    bearing_sigma_deg: float = 0.05
    init_rot_sigma2: float = 1e-4
    init_trans_sigma2: float = 1e-4

    def __post_init__(self):
        positive = ["max_iterations", "convergence_delta", "max_match_dist",
                    "sigma_gate", "sigma2_floor", "process_noise_rot",
                    "process_noise_trans", "scan_dt", "range_sigma",
                    "init_rot_sigma2", "init_trans_sigma2"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got "
                                  f"{getattr(self, name)}")
        if self.downsample < 0 or self.bearing_sigma_deg < 0:
            raise ConfigError("downsample and bearing_sigma_deg must be >= 0")
        if not 0.0 <= self.min_match_ratio <= 1.0:
            raise ConfigError(f"min_match_ratio must be in [0, 1], got "
                              f"{self.min_match_ratio}")


@dataclass
class OdometryState:
    pose: Pose
    velocity_linear: np.ndarray
    velocity_angular: np.ndarray
    state_cov: np.ndarray      # 6x6, rotation tangent block first

    @classmethod
    def initial(cls, cfg: OdometryConfig, pose: Pose = None) -> "OdometryState":
        cov = np.diag([cfg.init_rot_sigma2] * 3 + [cfg.init_trans_sigma2] * 3)
        return cls(pose=pose if pose is not None else Pose.identity(),
                   velocity_linear=np.zeros(3),
                   velocity_angular=np.zeros(3),
                   state_cov=cov)

    def pose_cov(self) -> PoseCov:
        return PoseCov(rot_cov=self.state_cov[0:3, 0:3],
                       trans_cov=self.state_cov[3:6, 3:6])


@dataclass
class PointMatch:
    plane: object
    d: float
    sigma2: float
    prob: float
    point_index: int = -1


@dataclass
class UpdateResult:
    state: OdometryState
    num_matched: int
    num_points: int
    iterations: int


def predict(state: OdometryState, dt: float,
            cfg: OdometryConfig) -> OdometryState:
    """Constant-velocity propagation: advance the pose by velocity * dt and
    inflate the covariance by the process noise rate."""
    rot = state.pose.rotation @ so3_exp(state.velocity_angular * dt)
    trans = state.pose.translation + state.velocity_linear * dt
    noise = np.diag([cfg.process_noise_rot] * 3
                    + [cfg.process_noise_trans] * 3) * dt
    return OdometryState(pose=Pose(rot, trans),
                         velocity_linear=state.velocity_linear.copy(),
                         velocity_angular=state.velocity_angular.copy(),
                         state_cov=state.state_cov + noise)


def residual_sigma(plane_cov: np.ndarray, point_cov: np.ndarray,
                   n: np.ndarray, q: np.ndarray, wp: np.ndarray,
                   floor: float = 1e-9) -> float:
    """Variance of the point-to-plane residual d = n.(p - q).

    First-order propagation through d of the plane parameter covariance
    (over normal then centroid) and the world point covariance, treated as
    independent blocks; `floor` is added so the result stays positive.
    """
    v = np.concatenate([wp - q, -n])
    return float(v @ plane_cov @ v + n @ point_cov @ n) + floor


def match_probability(d: float, sigma2: float) -> float:
    """Gaussian density of a zero-mean residual d with variance sigma2."""
    sigma = math.sqrt(sigma2)
    return math.exp(-0.5 * d * d / sigma2) / (sigma * _SQRT_2PI)


def _log_match_probability(d: float, sigma2: float) -> float:
    # ranking happens in log space: the density itself underflows to 0.0
    # once d is a few hundred sigma out, which would turn the argmax into
    # a tie broken by plane order
    return -0.5 * d * d / sigma2 - 0.5 * math.log(2.0 * math.pi * sigma2)


def match_point(vmap: VoxelMap, wp: WorldPoint, max_dist: float,
                sigma_gate: float,
                sigma2_floor: float = 1e-9) -> Optional[PointMatch]:
    """Most probable plane for a world point, or None.

    Candidates are every plane of the voxel containing the point. Planes
    farther than max_dist, or whose residual fails the chi-square-style
    sigma gate, are discarded; the survivor with the highest residual
    probability wins.
    """
    best = None
    best_logp = -math.inf
    p = wp.position
    for plane in vmap.query_candidate_planes(p):
        d = float(plane.normal @ (p - plane.centroid))
        if abs(d) > max_dist:
            continue
        sigma2 = residual_sigma(plane.param_cov, wp.cov, plane.normal,
                                plane.centroid, p, sigma2_floor)
        if d * d / sigma2 > sigma_gate * sigma_gate:
            continue
        logp = _log_match_probability(d, sigma2)
        if logp > best_logp:
            best_logp = logp
            best = PointMatch(plane=plane, d=d, sigma2=sigma2,
                              prob=match_probability(d, sigma2))
    return best


def match_scan(vmap: VoxelMap, wpos: np.ndarray, wcov: np.ndarray,
               max_dist: float, sigma_gate: float, sigma2_floor: float):
    """Batched match_point over a whole scan.

    Same selection rule as match_point, evaluated per voxel with the points
    grouped so the plane candidate math vectorizes.

    Returns:
        (planes, d, sigma2, prob): object/float arrays of length M; the
        plane entry is None (and prob -1) where a point is unmatched.
    """
    m = wpos.shape[0]
    best_logp = np.full(m, -np.inf)
    best_prob = np.full(m, -1.0)
    best_d = np.zeros(m)
    best_s2 = np.ones(m)
    best_plane = np.full(m, None, dtype=object)
    if m == 0:
        return best_plane, best_d, best_s2, best_prob

    gate2 = sigma_gate * sigma_gate
    cell = np.floor(wpos / vmap.config.voxel_size).astype(int)
    groups: dict = {}
    for i in range(m):
        groups.setdefault((cell[i, 0], cell[i, 1], cell[i, 2]),
                          []).append(i)
    for key, idx_list in groups.items():
        planes = vmap.query_planes_by_key(VoxelKey(*key))
        if not planes:
            continue
        idx = np.asarray(idx_list)
        pts = wpos[idx]
        covs = wcov[idx]
        for plane in planes:
            n = plane.normal
            diff = pts - plane.centroid
            d = diff @ n
            v = np.concatenate(
                [diff, np.broadcast_to(-n, diff.shape)], axis=1)
            s2 = np.einsum("ka,ab,kb->k", v, plane.param_cov, v) \
                + np.einsum("kab,a,b->k", covs, n, n) + sigma2_floor
            ok = (np.abs(d) <= max_dist) & (d * d / s2 <= gate2)
            logp = np.where(
                ok, -0.5 * d * d / s2 - 0.5 * np.log(2.0 * np.pi * s2),
                -np.inf)
            better = logp > best_logp[idx]
            upd = idx[better]
            best_logp[upd] = logp[better]
            best_prob[upd] = np.exp(-0.5 * d[better] ** 2 / s2[better]) \
                / np.sqrt(2.0 * np.pi * s2[better])
            best_d[upd] = d[better]
            best_s2[upd] = s2[better]
            best_plane[upd] = plane
    return best_plane, best_d, best_s2, best_prob


def update(state: OdometryState, points: np.ndarray, covs: np.ndarray,
           vmap: VoxelMap, cfg: OdometryConfig,
           timer: StageTimer = None) -> UpdateResult:
    """Iterated MAP pose refinement from point-to-plane matches.

    Each iteration transforms the scan with the current pose estimate (the
    prior covariance feeds the world-point covariances throughout), rematches
    against the map, and solves the Gauss-Newton normal equations
    regularized by the motion prior. The posterior covariance is the inverse
    of the final information matrix. With no measurements the predicted
    state is the exact fixed point.

    Args:
        state: predicted state (prior mean and covariance).
        points: (M, 3) scan in the sensor frame.
        covs: (M, 3, 3) per-point sensor-frame covariances.

    Raises:
        InsufficientMatches: matched fraction below cfg.min_match_ratio.
    """
    prior_pose = state.pose
    prior_info = np.linalg.inv(state.state_cov)
    prior_info = 0.5 * (prior_info + prior_info.T)
    pose_cov = state.pose_cov()

    rot = prior_pose.rotation.copy()
    trans = prior_pose.translation.copy()
    n_pts = points.shape[0]

    info = prior_info
    n_matched = 0
    iterations = 0
    for it in range(cfg.max_iterations):
        iterations = it + 1
        cur = Pose(rot, trans)
        wpos, wcov = transform_points(points, covs, cur, pose_cov)

        with maybe_stage(timer, "matching"):
            planes, d_all, s2_all, prob = match_scan(
                vmap, wpos, wcov, cfg.max_match_dist, cfg.sigma_gate,
                cfg.sigma2_floor)
            sel = np.nonzero(prob >= 0.0)[0]
            n_matched = sel.shape[0]
        if n_pts > 0 and n_matched / n_pts < cfg.min_match_ratio:
            raise InsufficientMatches(
                f"{n_matched}/{n_pts} matched, need ratio >= "
                f"{cfg.min_match_ratio}")

        with maybe_stage(timer, "solve"):
            normals = np.array([planes[i].normal for i in sel]) \
                .reshape(-1, 3)
            h = np.zeros((n_matched, 6))
            # row of d w.r.t. (rot tangent, trans): [-n^T R [p_L]x, n^T]
            h[:, 0:3] = -np.cross(normals @ rot, points[sel])
            h[:, 3:6] = normals
            r = d_all[sel]
            w = 1.0 / s2_all[sel]

            err = np.concatenate([so3_log(prior_pose.rotation.T @ rot),
                                  trans - prior_pose.translation])
            info = (h.T * w) @ h + prior_info
            rhs = -(h.T @ (w * r) + prior_info @ err)
            delta = np.linalg.solve(info, rhs)
            rot = rot @ so3_exp(delta[0:3])
            trans = trans + delta[3:6]
        if float(np.linalg.norm(delta)) < cfg.convergence_delta:
            break

    post_cov = np.linalg.inv(info)
    post_cov = 0.5 * (post_cov + post_cov.T)
    new_state = OdometryState(pose=Pose(rot, trans),
                              velocity_linear=state.velocity_linear.copy(),
                              velocity_angular=state.velocity_angular.copy(),
                              state_cov=post_cov)
    return UpdateResult(state=new_state, num_matched=n_matched,
                        num_points=n_pts, iterations=iterations)


def downsample_voxel(points: np.ndarray, cell: float) -> np.ndarray:
    """Voxel-grid filter: one centroid per occupied cell, cells emitted in
    first-appearance order. cell <= 0 disables filtering."""
    if cell <= 0 or points.shape[0] == 0:
        return np.array(points, dtype=float)
    keys = np.floor(points / cell).astype(int)
    buckets: "OrderedDict[tuple, list]" = OrderedDict()
    for i in range(points.shape[0]):
        buckets.setdefault(tuple(keys[i]), []).append(i)
    return np.array([points[idx].mean(axis=0) for idx in buckets.values()])


class OdometryPipeline:
    """Sequential scan-to-map odometry driver.

    Per scan: voxel-grid downsample, constant-velocity predict, iterated MAP
    update, then map insertion at the posterior pose with full Eq.-style
    covariance propagation. Velocity is re-estimated by finite-differencing
    consecutive posterior poses. Scans that fail to match keep the predicted
    pose and are counted as divergent.
    """

    def __init__(self, map_config: MapConfig = None,
                 odo_config: OdometryConfig = None, seed: int = 42,
                 initial_pose: Pose = None):
        self.cfg = odo_config if odo_config is not None else OdometryConfig()
        self.map = VoxelMap(map_config, seed=seed)
        self.state = OdometryState.initial(self.cfg, initial_pose)
        self.timer = StageTimer()
        self.map.timer = self.timer
        self.trajectory: list = []          # (timestamp, Pose)
        self.divergent_frames = 0
        self.last_result: Optional[UpdateResult] = None
        self._last_time: Optional[float] = None
        self._last_pose: Optional[Pose] = None

    def process_scan(self, points, timestamp: float) -> Pose:
        """Advance the estimator by one scan; returns the posterior pose."""
        cfg = self.cfg
        with self.timer.stage("total"):
            raw = np.asarray(points, dtype=float).reshape(-1, 3)
            with self.timer.stage("downsample"):
                pts = downsample_voxel(raw, cfg.downsample)
                covs = lidar_point_covariances(pts, cfg.range_sigma,
                                               cfg.bearing_sigma_deg)

            dt = cfg.scan_dt
            if self._last_time is not None and timestamp > self._last_time:
                dt = timestamp - self._last_time

            if len(self.map) == 0:
                posterior = self.state
            else:
                with self.timer.stage("predict"):
                    predicted = predict(self.state, dt, cfg)
                try:
                    self.last_result = update(predicted, pts, covs, self.map,
                                              cfg, timer=self.timer)
                    posterior = self.last_result.state
                except InsufficientMatches as exc:
                    log.warning("scan t=%.3f: %s; keeping predicted pose",
                                timestamp, exc)
                    self.divergent_frames += 1
                    posterior = predicted

            if self._last_pose is not None and dt > 0:
                posterior.velocity_linear = (
                    posterior.pose.translation
                    - self._last_pose.translation) / dt
                posterior.velocity_angular = so3_log(
                    self._last_pose.rotation.T @ posterior.pose.rotation) / dt

            with self.timer.stage("map_update"):
                # the full-density scan goes into the map; the downsampled
                # one only drives registration
                raw_covs = lidar_point_covariances(raw, cfg.range_sigma,
                                                   cfg.bearing_sigma_deg)
                wpos, wcov = transform_points(raw, raw_covs, posterior.pose,
                                              posterior.pose_cov())
                self.map.insert_scan(
                    [WorldPoint(wpos[i], wcov[i])
                     for i in range(wpos.shape[0])])

            self.state = posterior
            self.trajectory.append((timestamp, posterior.pose))
            self._last_time = timestamp
            self._last_pose = posterior.pose
        return posterior.pose
