"""Adaptive voxel map of probabilistic planes with scan-to-map odometry."""

from .errors import (ConfigError, DegenerateInput, EigengapTooSmall,
                     EmptyScene, InsufficientMatches, MalformedFile,
                     NoOverlap, NoPlane, RVoxelMapError)
from .geometry import (Pose, PoseCov, WorldPoint, lidar_point_covariance,
                       lidar_point_covariances, quaternion_to_rotation,
                       rotation_to_quaternion, skew, skew_batch, so3_exp,
                       so3_log, transform_point, transform_points)
from .plane_fit import (Plane, RansacResult, eig_descending,
                        fit_plane_moments,
                        fit_probabilistic_plane, fix_normal_sign,
                        plane_covariance, plane_point_jacobian,
                        ransac_partition)
from .validity import (GridCluster, GridIndex, PlaneGrid, cluster_grids,
                       plane_validity_check, project_to_grid)
from .voxel_map import (MapConfig, MapStats, OctreeNode, PointChain,
                        VoxelKey, VoxelMap, build_octree, collect_points,
                        count_points, incremental_update, iter_planes,
                        point_voxel_key)
from .odometry import (OdometryConfig, OdometryPipeline, OdometryState,
                       PointMatch, UpdateResult, downsample_voxel,
                       match_point, match_probability, match_scan,
                       predict,
                       residual_sigma, update)
from .synthetic import (OUTLIER, LabeledScan, SceneSpec, corridor_scene,
                        generate_scene_scan, rectangle, trajectory_corridor)
from .evaluation import Trajectory, align_rigid, associate, ate_rmse
from .io import (load_dataset_scans, read_scan_kitti_bin,
                 read_scan_ply_ascii, read_trajectory_tum, write_dataset,
                 write_map_ply, write_scan_ply, write_trajectory_tum)
from .config import RunConfig, load_config, save_config
from .timing import StageTimer

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DegenerateInput", "EigengapTooSmall", "EmptyScene",
    "InsufficientMatches", "MalformedFile", "NoOverlap", "NoPlane",
    "RVoxelMapError",
    "Pose", "PoseCov", "WorldPoint", "lidar_point_covariance",
    "lidar_point_covariances", "quaternion_to_rotation",
    "rotation_to_quaternion", "skew", "skew_batch", "so3_exp", "so3_log",
    "transform_point", "transform_points",
    "Plane", "RansacResult", "eig_descending", "fit_plane_moments",
    "fit_probabilistic_plane",
    "fix_normal_sign", "plane_covariance", "plane_point_jacobian",
    "ransac_partition",
    "GridCluster", "GridIndex", "PlaneGrid", "cluster_grids",
    "plane_validity_check", "project_to_grid",
    "MapConfig", "MapStats", "OctreeNode", "PointChain", "VoxelKey",
    "VoxelMap", "build_octree", "collect_points", "count_points",
    "incremental_update", "iter_planes", "point_voxel_key",
    "OdometryConfig", "OdometryPipeline", "OdometryState", "PointMatch",
    "UpdateResult", "downsample_voxel", "match_point", "match_probability",
    "match_scan",
    "predict", "residual_sigma", "update",
    "OUTLIER", "LabeledScan", "SceneSpec", "corridor_scene",
    "generate_scene_scan", "rectangle", "trajectory_corridor",
    "Trajectory", "align_rigid", "associate", "ate_rmse",
    "load_dataset_scans", "read_scan_kitti_bin", "read_scan_ply_ascii",
    "read_trajectory_tum", "write_dataset", "write_map_ply",
    "write_scan_ply", "write_trajectory_tum",
    "RunConfig", "load_config", "save_config",
    "StageTimer",
]
