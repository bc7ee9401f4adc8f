"""Ground-truth scenes and scans for desk-scale verification.

Scenes are lists of bounded planar patches (unit normal, offset, polygon).
Scans are sampled directly on the patches with Gaussian noise along each
patch normal, plus a controlled fraction of uniform outliers in the scene
box, and expressed in the sensor frame of a given pose. Everything is
deterministic per seed so failures replay exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyScene
from .geometry import Pose

OUTLIER = -1


@dataclass
class SceneSpec:
    """Planar patches plus sampling noise parameters.

    planes: list of (normal, offset, polygon) with unit normal, the plane
    being {x : normal.x = offset}, and polygon an (K, 3) vertex array on the
    plane (convex, fan-triangulated for sampling).
    """

    planes: list
    outlier_ratio: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 42

    def __post_init__(self):
        if not 0.0 <= self.outlier_ratio < 1.0:
            raise ConfigError(f"outlier_ratio must be in [0, 1), got "
                              f"{self.outlier_ratio}")
        if self.noise_sigma < 0.0:
            raise ConfigError("noise_sigma must be >= 0")
        for k, (normal, _, poly) in enumerate(self.planes):
            if abs(np.linalg.norm(normal) - 1.0) > 1e-6:
                raise ConfigError(f"plane {k} normal is not unit length")
            if np.asarray(poly).shape[0] < 3:
                raise ConfigError(f"plane {k} polygon needs >= 3 vertices")

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        verts = np.concatenate([np.asarray(poly, dtype=float)
                                for _, _, poly in self.planes])
        return verts.min(axis=0), verts.max(axis=0)


@dataclass
class LabeledScan:
    """Sensor-frame points with per-point ground truth: the index of the
    scene plane each point was sampled from, or OUTLIER."""

    points: np.ndarray      # (N, 3), sensor frame
    labels: np.ndarray      # (N,), plane index or OUTLIER
    true_pose: Pose


def _fan_triangles(poly: np.ndarray):
    """(tri_count, 3, 3) fan triangulation and per-triangle areas."""
    k = poly.shape[0]
    tris = np.stack([np.stack([poly[0], poly[i], poly[i + 1]])
                     for i in range(1, k - 1)])
    cross = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    return tris, areas


def _sample_on_polygon(rng, poly: np.ndarray, count: int) -> np.ndarray:
    tris, areas = _fan_triangles(np.asarray(poly, dtype=float))
    total = areas.sum()
    if total <= 0.0:
        raise ConfigError("polygon has zero area")
    which = rng.choice(len(areas), size=count, p=areas / total)
    u = rng.random(count)
    v = rng.random(count)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    t = tris[which]
    return t[:, 0] + u[:, None] * (t[:, 1] - t[:, 0]) \
        + v[:, None] * (t[:, 2] - t[:, 0])


def generate_scene_scan(spec: SceneSpec, pose: Pose, rays: int,
                        max_range: float = 50.0) -> LabeledScan:
    """Sample a labeled scan of the scene from a sensor pose.

    Surface points are drawn on the patches proportionally to area within
    max_range of the sensor (rejection sampling), perturbed along their
    patch normal by N(0, noise_sigma^2); an exact round(rays *
    outlier_ratio) count of uniform box outliers is appended. Points are
    returned in the sensor frame. Deterministic for a given spec seed.

    Raises:
        EmptyScene: no patch has any surface within max_range.
    """
    if rays <= 0:
        raise ConfigError(f"rays must be positive, got {rays}")
    rng = np.random.default_rng(spec.seed)
    sensor = pose.translation

    n_outliers = int(round(rays * spec.outlier_ratio))
    n_surface = rays - n_outliers

    areas = []
    for _, _, poly in spec.planes:
        _, tri_areas = _fan_triangles(np.asarray(poly, dtype=float))
        areas.append(tri_areas.sum())
    areas = np.asarray(areas)
    probs = areas / areas.sum()

    world_pts = []
    labels = []
    remaining = n_surface
    for _ in range(60):
        if remaining <= 0:
            break
        plane_ids = rng.choice(len(spec.planes), size=remaining, p=probs)
        batch_pts = np.empty((remaining, 3))
        for pid in np.unique(plane_ids):
            sel = plane_ids == pid
            batch_pts[sel] = _sample_on_polygon(
                rng, spec.planes[pid][2], int(sel.sum()))
        keep = np.linalg.norm(batch_pts - sensor, axis=1) <= max_range
        if keep.any():
            world_pts.append(batch_pts[keep])
            labels.append(plane_ids[keep])
            remaining -= int(keep.sum())
    if n_surface > 0 and not world_pts:
        raise EmptyScene("no scene surface within range of the sensor")

    pts = np.concatenate(world_pts) if world_pts else np.empty((0, 3))
    lab = np.concatenate(labels).astype(int) if labels else \
        np.empty(0, dtype=int)

    if spec.noise_sigma > 0 and pts.shape[0] > 0:
        normals = np.array([spec.planes[i][0] for i in lab])
        pts = pts + normals * rng.normal(0.0, spec.noise_sigma,
                                         pts.shape[0])[:, None]

    if n_outliers > 0:
        lo, hi = spec.bounding_box()
        box_pts = lo + rng.random((n_outliers, 3)) * (hi - lo)
        pts = np.concatenate([pts, box_pts])
        lab = np.concatenate([lab, np.full(n_outliers, OUTLIER, dtype=int)])

    inv = pose.inverse()
    sensor_pts = pts @ inv.rotation.T + inv.translation
    return LabeledScan(points=sensor_pts, labels=lab, true_pose=pose)


def rectangle(center, edge_u, edge_v) -> np.ndarray:
    """(4, 3) rectangle vertices from a center and two half-edge vectors."""
    c = np.asarray(center, dtype=float)
    u = np.asarray(edge_u, dtype=float)
    v = np.asarray(edge_v, dtype=float)
    return np.array([c - u - v, c + u - v, c + u + v, c - u + v])


def corridor_scene(length: float = 20.0, width: float = 4.0,
                   height: float = 3.0, outlier_ratio: float = 0.0,
                   noise_sigma: float = 0.0, seed: int = 42) -> SceneSpec:
    """Closed rectangular corridor along +x, centered on the x axis.

    Floor, ceiling, two side walls, and two end caps (the caps sit a couple
    of meters beyond the ends of the sensor path so along-axis translation
    stays observable throughout a traverse).
    """
    hw = width / 2.0
    hh = height / 2.0
    margin = 2.0
    x0 = -margin
    x1 = length + margin
    mid_x = (x0 + x1) / 2.0
    half_len = (x1 - x0) / 2.0
    ex = np.array([half_len, 0.0, 0.0])
    planes = [
        (np.array([0.0, 0.0, 1.0]), -hh,
         rectangle([mid_x, 0.0, -hh], ex, [0.0, hw, 0.0])),          # floor
        (np.array([0.0, 0.0, 1.0]), hh,
         rectangle([mid_x, 0.0, hh], ex, [0.0, hw, 0.0])),           # ceiling
        (np.array([0.0, 1.0, 0.0]), -hw,
         rectangle([mid_x, -hw, 0.0], ex, [0.0, 0.0, hh])),          # right
        (np.array([0.0, 1.0, 0.0]), hw,
         rectangle([mid_x, hw, 0.0], ex, [0.0, 0.0, hh])),           # left
        (np.array([1.0, 0.0, 0.0]), x0,
         rectangle([x0, 0.0, 0.0], [0.0, hw, 0.0], [0.0, 0.0, hh])),  # near cap
        (np.array([1.0, 0.0, 0.0]), x1,
         rectangle([x1, 0.0, 0.0], [0.0, hw, 0.0], [0.0, 0.0, hh])),  # far cap
    ]
    return SceneSpec(planes=planes, outlier_ratio=outlier_ratio,
                     noise_sigma=noise_sigma, seed=seed)


def trajectory_corridor(length: float, num_scans: int) -> list:
    """Constant-velocity straight-line poses along +x, starting at the
    identity; the final pose sits `length` meters down the corridor."""
    if num_scans < 2:
        raise ConfigError(f"num_scans must be >= 2, got {num_scans}")
    step = length / (num_scans - 1)
    eye = np.eye(3)
    return [Pose(eye, np.array([i * step, 0.0, 0.0]))
            for i in range(num_scans)]
