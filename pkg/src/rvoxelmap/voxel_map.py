"""Adaptive voxel map of probabilistic planes.

The world is hashed into coarse voxels; each voxel owns a small octree built
by a recursive detect-and-reuse pipeline: RANSAC separates outliers, the
inliers are eigen-fitted and validity-checked, and the outliers are pushed
down into octants and re-processed. Leaves keep unexplained points so later
rebuilds can reuse them. Voxel recency is tracked by an LRU so the map stays
bounded in large environments.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigError, DegenerateInput, EigengapTooSmall, NoPlane
from .geometry import WorldPoint
from .plane_fit import (Plane, eig_descending, fit_plane_moments,
                        fit_probabilistic_plane, ransac_partition)
from .timing import maybe_stage
from .validity import plane_validity_check

_CHUNK = 256


class VoxelKey(NamedTuple):
    ix: int
    iy: int
    iz: int


def point_voxel_key(position, voxel_size: float) -> VoxelKey:
    """Coarse voxel containing a world position (floor on each axis)."""
    return VoxelKey(int(np.floor(position[0] / voxel_size)),
                    int(np.floor(position[1] / voxel_size)),
                    int(np.floor(position[2] / voxel_size)))


class _Link:
    __slots__ = ("items", "next")

    def __init__(self, items):
        self.items = items
        self.next = None


class PointChain:
    """Singly linked list of point chunks.

    Supports O(1) append (amortized) and O(1) splice of a whole other chain,
    so octree reconstruction can gather every stored point without copying
    container contents.
    """

    __slots__ = ("_head", "_tail", "_n")

    def __init__(self):
        self._head = None
        self._tail = None
        self._n = 0

    @classmethod
    def from_list(cls, points) -> "PointChain":
        chain = cls()
        if points:
            link = _Link(list(points))
            chain._head = chain._tail = link
            chain._n = len(points)
        return chain

    def append(self, point):
        if self._tail is None or len(self._tail.items) >= _CHUNK:
            link = _Link([])
            if self._tail is None:
                self._head = link
            else:
                self._tail.next = link
            self._tail = link
        self._tail.items.append(point)
        self._n += 1

    def splice(self, other: "PointChain"):
        """Move every point of `other` to the end of this chain; `other`
        is emptied. Constant time regardless of length."""
        if other._n == 0:
            return
        if self._head is None:
            self._head, self._tail = other._head, other._tail
        else:
            self._tail.next = other._head
            self._tail = other._tail
        self._n += other._n
        other._head = other._tail = None
        other._n = 0

    def __len__(self):
        return self._n

    def __iter__(self):
        link = self._head
        while link is not None:
            yield from link.items
            link = link.next


@dataclass
class MapConfig:
    """Knobs for map construction and maintenance. Distances in meters,
    planarity threshold in m^2 (an eigenvalue of the scatter matrix)."""

    voxel_size: float = 3.0
    max_depth: int = 4
    ransac_dist_th: float = 0.05
    min_inlier_ratio: float = 0.5
    ransac_iters: int = 20
    min_points: int = 10
    planarity_th: float = 0.01
    grid_divisor: int = 8
    lru_capacity: int = 50000
    rebuild_point_threshold: int = 20
    converged_cov_trace: float = 1e-6

    def __post_init__(self):
        positive = ["voxel_size", "max_depth", "ransac_dist_th",
                    "ransac_iters", "min_points", "planarity_th",
                    "grid_divisor", "lru_capacity",
                    "rebuild_point_threshold", "converged_cov_trace"]
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got "
                                  f"{getattr(self, name)}")
        if not 0.0 < self.min_inlier_ratio <= 1.0:
            raise ConfigError(f"min_inlier_ratio must be in (0, 1], got "
                              f"{self.min_inlier_ratio}")


@dataclass
class MapStats:
    planes_built: int = 0
    rebuilds: int = 0
    evictions: int = 0
    incremental_accepted: int = 0
    incremental_rejected: int = 0


class OctreeNode:
    """One cube of space. May hold a fitted plane (with the points that
    support it), children refining its outliers, and, when it has no
    children, a set of unexplained points."""

    __slots__ = ("depth", "center", "half_size", "plane", "plane_points",
                 "non_plane_points", "children")

    def __init__(self, depth: int, center, half_size: float):
        self.depth = depth
        self.center = np.asarray(center, dtype=float)
        self.half_size = float(half_size)
        self.plane: Optional[Plane] = None
        self.plane_points = PointChain()
        self.non_plane_points = PointChain()
        self.children = None  # list of 8 Optional[OctreeNode] once subdivided

    def octant_of(self, position) -> int:
        """Octant index of a position; ties on a splitting plane go to the
        higher octant."""
        k = 0
        if position[0] >= self.center[0]:
            k |= 1
        if position[1] >= self.center[1]:
            k |= 2
        if position[2] >= self.center[2]:
            k |= 4
        return k

    def child_geometry(self, octant: int):
        quarter = self.half_size / 2.0
        offset = np.array([quarter if octant & 1 else -quarter,
                           quarter if octant & 2 else -quarter,
                           quarter if octant & 4 else -quarter])
        return self.center + offset, quarter


def iter_planes(node: OctreeNode):
    """Yield (node, plane) pairs over the subtree in preorder."""
    if node.plane is not None:
        yield node, node.plane
    if node.children is not None:
        for child in node.children:
            if child is not None:
                yield from iter_planes(child)


def collect_points(node: OctreeNode) -> PointChain:
    """Drain every point of the subtree into one chain by splicing."""
    chain = PointChain()
    chain.splice(node.plane_points)
    chain.splice(node.non_plane_points)
    if node.children is not None:
        for child in node.children:
            if child is not None:
                chain.splice(collect_points(child))
    return chain


def count_points(node: OctreeNode) -> int:
    total = len(node.plane_points) + len(node.non_plane_points)
    if node.children is not None:
        total += sum(count_points(c) for c in node.children if c is not None)
    return total


def build_octree(points, depth: int, center, half_size: float,
                 cfg: MapConfig, rng, timer=None) -> OctreeNode:
    """Recursive plane extraction over one cube.

    RANSAC partitions the points; if the inlier share clears the ratio gate
    and the inlier fit is thin enough, the validity check trims the inliers
    to their dominant surface patch and the final plane is refit from those.
    Remaining outliers are split into octants: populous octants recurse one
    level deeper, sparse ones become leaf children that just hold their
    points. Degenerate fits at any stage demote all points to outliers.
    """
    node = OctreeNode(depth, center, half_size)
    pts = list(points)
    outliers = pts
    plane_points = None

    if len(pts) >= 3:
        try:
            with maybe_stage(timer, "ransac"):
                part = ransac_partition(pts, cfg.ransac_dist_th,
                                        cfg.ransac_iters, rng)
        except DegenerateInput:
            part = None
        if part is not None and len(part.inliers) >= 3 \
                and len(part.inliers) / len(pts) > cfg.min_inlier_ratio:
            inlier_pts = [pts[i] for i in part.inliers]
            with maybe_stage(timer, "plane_param_update"):
                q, _, moment, vals, vecs = fit_plane_moments(inlier_pts)
            if vals[2] < cfg.planarity_th:
                reference = Plane(normal=vecs[:, 2].copy(), centroid=q,
                                  eigvals=vals, eigvecs=vecs,
                                  param_cov=np.zeros((6, 6)),
                                  num_points=len(inlier_pts), moment=moment)
                with maybe_stage(timer, "plane_check"):
                    # grid resolution is fixed at voxel_size / divisor at
                    # every octree depth, not the node edge
                    valid, rejected = plane_validity_check(
                        reference, inlier_pts, len(pts),
                        cfg.min_inlier_ratio, cfg.grid_divisor,
                        cfg.voxel_size)
                if len(valid) >= 3:
                    try:
                        with maybe_stage(timer, "plane_param_update"):
                            node.plane = fit_probabilistic_plane(valid)
                        plane_points = valid
                        outliers = [pts[i] for i in part.outliers] + rejected
                    except (DegenerateInput, EigengapTooSmall):
                        node.plane = None
                        outliers = pts

    if plane_points is not None:
        node.plane_points = PointChain.from_list(plane_points)

    if outliers and depth <= cfg.max_depth:
        node.children = [None] * 8
        groups: dict = {}
        for p in outliers:
            groups.setdefault(node.octant_of(p.position), []).append(p)
        for k in sorted(groups):
            child_center, child_half = node.child_geometry(k)
            if len(groups[k]) >= cfg.min_points:
                node.children[k] = build_octree(groups[k], depth + 1,
                                                child_center, child_half,
                                                cfg, rng, timer)
            else:
                leaf = OctreeNode(depth + 1, child_center, child_half)
                leaf.non_plane_points = PointChain.from_list(groups[k])
                node.children[k] = leaf
    elif outliers:
        node.non_plane_points = PointChain.from_list(outliers)
    return node


def _descend(root: OctreeNode, position):
    """Walk toward the leaf containing position.

    Returns (nodes_with_planes_on_path, last_node_reached).
    """
    path = []
    node = root
    while True:
        if node.plane is not None:
            path.append(node)
        if node.children is None:
            return path, node
        child = node.children[node.octant_of(position)]
        if child is None:
            return path, node
        node = child


def incremental_update(root: OctreeNode, p_new: WorldPoint,
                       cfg: MapConfig, timer=None) -> bool:
    """Fold one new point into the nearest plane on its descent path.

    The candidate plane minimizes |n.(p - q)| among planes whose cube
    contains the point. Its centroid and moment are tentatively updated; if
    the refreshed smallest eigenvalue still clears the planarity threshold
    the update commits (eigenstructure refreshed, covariance scaled by
    N/(N+1) until the converged freeze kicks in), otherwise the point is
    stored in the containing leaf's non-plane set.

    Returns:
        True if the point was absorbed by a plane.

    Raises:
        NoPlane: no plane exists on the point's descent path.
    """
    path, last = _descend(root, p_new.position)
    if not path:
        raise NoPlane("no plane on the descent path of the new point")

    p = p_new.position
    best_node = min(path, key=lambda nd: abs(
        float(nd.plane.normal @ (p - nd.plane.centroid))))
    plane = best_node.plane
    n = plane.num_points

    with maybe_stage(timer, "plane_param_update"):
        q_new = (n / (n + 1.0)) * plane.centroid + (1.0 / (n + 1.0)) * p
        moment_new = plane.moment + np.outer(p, p)
        scatter = moment_new / (n + 1.0) - np.outer(q_new, q_new)
        scatter = 0.5 * (scatter + scatter.T)
        vals, vecs = eig_descending(scatter)

    if vals[2] >= cfg.planarity_th:
        _leaf_store(last, p_new)
        return False

    plane.centroid = q_new
    plane.moment = moment_new
    plane.num_points = n + 1
    plane.eigvals = vals
    plane.eigvecs = vecs
    plane.normal = vecs[:, 2].copy()
    if plane.converged or np.trace(plane.param_cov) < cfg.converged_cov_trace:
        plane.converged = True
    else:
        plane.param_cov = plane.param_cov * (n / (n + 1.0))
    best_node.plane_points.append(p_new)
    return True


def _leaf_store(node: OctreeNode, p_new: WorldPoint):
    """Stash a point at the descent end, adding a leaf child if the node is
    already subdivided."""
    if node.children is None:
        node.non_plane_points.append(p_new)
        return
    k = node.octant_of(p_new.position)
    child_center, child_half = node.child_geometry(k)
    leaf = OctreeNode(node.depth + 1, child_center, child_half)
    leaf.non_plane_points.append(p_new)
    node.children[k] = leaf


@dataclass
class _VoxelEntry:
    root: OctreeNode
    total_points: int = 0
    points_at_last_build: int = 0
    new_since_build: int = 0
    has_plane: bool = False


class VoxelMap:
    """Hash of coarse voxels, each owning an octree of probabilistic planes.

    Insertion buckets world points by voxel, builds octrees for voxels that
    reach the minimum population, folds points into existing planes
    incrementally, and rebuilds a voxel's octree from scratch once enough
    new points have accumulated since its last build. An LRU over voxel
    keys bounds the number of live voxels.
    """

    def __init__(self, config: MapConfig = None, seed: int = 42):
        self.config = config if config is not None else MapConfig()
        self.stats = MapStats()
        self.timer = None
        self._table: "OrderedDict[VoxelKey, _VoxelEntry]" = OrderedDict()
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return len(self._table)

    def __contains__(self, key: VoxelKey):
        return key in self._table

    def keys_by_recency(self):
        """Voxel keys from least to most recently used."""
        return list(self._table.keys())

    def get_root(self, key: VoxelKey) -> Optional[OctreeNode]:
        entry = self._table.get(key)
        return entry.root if entry is not None else None

    def voxel_point_count(self, key: VoxelKey) -> int:
        entry = self._table.get(key)
        return entry.total_points if entry is not None else 0

    def all_planes(self):
        """(key, node, plane) triples over the whole map, insertion order."""
        for key, entry in self._table.items():
            for node, plane in iter_planes(entry.root):
                yield key, node, plane

    def insert_scan(self, points):
        """Insert world points with covariance into the map.

        Points are bucketed by voxel key; each touched voxel is refreshed
        in the LRU and over-capacity voxels are evicted, least recent first.
        """
        cfg = self.config
        buckets: "OrderedDict[VoxelKey, list]" = OrderedDict()
        for p in points:
            buckets.setdefault(point_voxel_key(p.position, cfg.voxel_size),
                               []).append(p)

        for key, pts in buckets.items():
            entry = self._table.get(key)
            if entry is None:
                ix, iy, iz = key
                center = (np.array([ix, iy, iz], dtype=float) + 0.5) \
                    * cfg.voxel_size
                entry = _VoxelEntry(root=OctreeNode(0, center,
                                                    cfg.voxel_size / 2.0))
                self._table[key] = entry

            if entry.has_plane:
                for p in pts:
                    try:
                        accepted = incremental_update(entry.root, p, cfg,
                                                      self.timer)
                    except NoPlane:
                        _leaf_store(entry.root, p)
                        accepted = False
                    if accepted:
                        self.stats.incremental_accepted += 1
                    else:
                        self.stats.incremental_rejected += 1
            else:
                for p in pts:
                    entry.root.non_plane_points.append(p)
            entry.total_points += len(pts)
            entry.new_since_build += len(pts)

            if entry.points_at_last_build == 0:
                if entry.total_points >= cfg.min_points:
                    self._rebuild_entry(key, entry)
            elif entry.new_since_build >= max(cfg.rebuild_point_threshold,
                                              entry.points_at_last_build):
                self._rebuild_entry(key, entry)

            self._table.move_to_end(key)

        while len(self._table) > cfg.lru_capacity:
            self._table.popitem(last=False)
            self.stats.evictions += 1

    def _rebuild_entry(self, key: VoxelKey, entry: _VoxelEntry):
        gathered = collect_points(entry.root)
        pts = list(gathered)
        rebuilt = entry.points_at_last_build > 0
        entry.root = build_octree(pts, 0, entry.root.center,
                                  entry.root.half_size, self.config,
                                  self._rng, self.timer)
        entry.total_points = len(pts)
        entry.points_at_last_build = len(pts)
        entry.new_since_build = 0
        n_planes = sum(1 for _ in iter_planes(entry.root))
        entry.has_plane = n_planes > 0
        self.stats.planes_built += n_planes
        if rebuilt:
            self.stats.rebuilds += 1

    def reconstruct_octree(self, key: VoxelKey):
        """Tear down and rebuild one voxel's octree from all its points."""
        entry = self._table[key]
        self._rebuild_entry(key, entry)
        self._table.move_to_end(key)

    def query_candidate_planes(self, position) -> list:
        """Every plane of the voxel containing `position` (preorder), or an
        empty list if that voxel is not mapped. Touches the LRU."""
        return self.query_planes_by_key(
            point_voxel_key(position, self.config.voxel_size))

    def query_planes_by_key(self, key: VoxelKey) -> list:
        entry = self._table.get(key)
        if entry is None:
            return []
        self._table.move_to_end(key)
        return [plane for _, plane in iter_planes(entry.root)]
