"""Trajectory containers and accuracy metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MalformedFile, NoOverlap
from .geometry import Pose


@dataclass
class Trajectory:
    """Timestamped poses, timestamps strictly increasing."""

    timestamps: np.ndarray
    poses: list

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if self.timestamps.shape[0] != len(self.poses):
            raise MalformedFile("timestamp/pose count mismatch")
        if np.any(np.diff(self.timestamps) <= 0):
            raise MalformedFile("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.translation for p in self.poses]) \
            if self.poses else np.empty((0, 3))

    @classmethod
    def from_pairs(cls, pairs) -> "Trajectory":
        """From a list of (timestamp, Pose)."""
        return cls(np.array([t for t, _ in pairs]),
                   [p for _, p in pairs])


def associate(estimate: Trajectory, ground_truth: Trajectory,
              max_dt: float = 0.01) -> list:
    """Greedy nearest-timestamp association within max_dt; each ground
    truth index is used at most once. Returns (est_idx, gt_idx) pairs."""
    pairs = []
    used = set()
    gt_times = ground_truth.timestamps
    for i, t in enumerate(estimate.timestamps):
        j = int(np.argmin(np.abs(gt_times - t)))
        if abs(gt_times[j] - t) <= max_dt and j not in used:
            used.add(j)
            pairs.append((i, j))
    return pairs


def align_rigid(source: np.ndarray, target: np.ndarray):
    """Closed-form rigid transform (R, t) minimizing sum of squared
    distances from R @ source_i + t to target_i (SVD solution, no scale)."""
    src_mean = source.mean(axis=0)
    tgt_mean = target.mean(axis=0)
    cross_cov = (source - src_mean).T @ (target - tgt_mean)
    u, _, vt = np.linalg.svd(cross_cov)
    sign = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, sign]) @ u.T
    return rot, tgt_mean - rot @ src_mean


def ate_rmse(estimate: Trajectory, ground_truth: Trajectory,
             max_dt: float = 0.01) -> float:
    """Absolute trajectory error: RMSE of translational residuals after the
    optimal rigid alignment of associated pose pairs.

    Raises:
        NoOverlap: fewer than 2 associated pairs.
    """
    pairs = associate(estimate, ground_truth, max_dt)
    if len(pairs) < 2:
        raise NoOverlap(f"only {len(pairs)} associated pose pairs")
    est = estimate.positions()[[i for i, _ in pairs]]
    gt = ground_truth.positions()[[j for _, j in pairs]]
    rot, trans = align_rigid(est, gt)
    residual = est @ rot.T + trans - gt
    return float(np.sqrt(np.mean(np.sum(residual ** 2, axis=1))))
