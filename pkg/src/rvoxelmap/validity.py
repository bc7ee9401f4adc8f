"""Point-distribution validity check for fitted planes.

RANSAC inliers of a thin but fragmented point set (two coplanar patches with
a gap between them, say) still fit a plane well; treating them as one
surface is wrong. The check projects the inliers onto the plane's two
in-plane eigenvectors, rasterizes them into a 2D grid centered at the
centroid, clusters occupied cells by 4-neighbor region growing, and keeps
the plane only if the dominant cluster holds a sufficient share of the
points that entered the node.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .plane_fit import Plane


class GridIndex(NamedTuple):
    x: int
    y: int


@dataclass
class PlaneGrid:
    """Occupancy grid over the plane's in-plane coordinates, origin at the
    centroid. cells maps GridIndex to the input indices that landed there."""

    resolution: float
    origin: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    cells: dict


@dataclass
class GridCluster:
    cell_keys: list
    total_points: int
    point_indices: np.ndarray


def project_to_grid(inliers, q: np.ndarray, u1: np.ndarray, u2: np.ndarray,
                    r: float) -> PlaneGrid:
    """Rasterize points into in-plane cells of edge r around q.

    Cell of point p is (floor((p-q)@u1 / r), floor((p-q)@u2 / r)); indices
    are signed. Every point lands in exactly one cell.
    """
    cells: dict = {}
    if len(inliers) > 0:
        positions = np.array([p.position for p in inliers])
        diffs = positions - q
        ii = np.floor((diffs @ u1) / r).astype(int)
        jj = np.floor((diffs @ u2) / r).astype(int)
        for k in range(positions.shape[0]):
            cells.setdefault(GridIndex(int(ii[k]), int(jj[k])), []).append(k)
    return PlaneGrid(resolution=r, origin=np.asarray(q, dtype=float),
                     u1=u1, u2=u2, cells=cells)


def cluster_grids(grid: PlaneGrid) -> list[GridCluster]:
    """Group occupied cells into 4-connected clusters via iterative DFS.

    Returned clusters are sorted by descending total point count, ties by
    the lexicographically smallest member cell, so the order does not depend
    on point insertion order.
    """
    unvisited = set(grid.cells.keys())
    clusters = []
    while unvisited:
        start = unvisited.pop()
        keys = [start]
        stack = [start]
        while stack:
            ci, cj = stack.pop()
            for nb in (GridIndex(ci + 1, cj), GridIndex(ci - 1, cj),
                       GridIndex(ci, cj + 1), GridIndex(ci, cj - 1)):
                if nb in unvisited:
                    unvisited.remove(nb)
                    keys.append(nb)
                    stack.append(nb)
        keys.sort()
        pts = np.sort(np.concatenate(
            [np.asarray(grid.cells[k], dtype=int) for k in keys]))
        clusters.append(GridCluster(cell_keys=keys,
                                    total_points=int(pts.shape[0]),
                                    point_indices=pts))
    clusters.sort(key=lambda c: (-c.total_points, c.cell_keys[0]))
    return clusters


def plane_validity_check(plane: Plane, inliers, total_input_count: int,
                         p_th: float, n_divisor: int,
                         voxel_size: float) -> tuple[list, list]:
    """Keep a fitted plane only if its inliers form one dominant patch.

    Projects the inliers onto the plane at resolution voxel_size / n_divisor,
    clusters, and compares the best cluster's point count against
    total_input_count (all points that entered the node, not just the
    inliers). Strictly above p_th the best cluster survives and the rest of
    the inliers become outliers; otherwise every inlier becomes an outlier.

    Returns:
        (valid_inliers, new_outliers): disjoint lists partitioning `inliers`.
    """
    r = voxel_size / n_divisor
    grid = project_to_grid(inliers, plane.centroid,
                           plane.eigvecs[:, 0], plane.eigvecs[:, 1], r)
    clusters = cluster_grids(grid)
    if not clusters:
        return [], list(inliers)
    best = clusters[0]
    if best.total_points / total_input_count > p_th:
        keep = set(best.point_indices.tolist())
        valid = [p for k, p in enumerate(inliers) if k in keep]
        rejected = [p for k, p in enumerate(inliers) if k not in keep]
        return valid, rejected
    return [], list(inliers)
