"""Command-line entry points.

Subcommands: `odometry` runs the full pipeline over a scan directory,
`build-map` constructs a map from scans posed by a ground-truth trajectory,
`eval` compares two trajectories, and `synth` writes a synthetic corridor
dataset. `RVM_LOG=debug|info|warn` controls verbosity.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, save_config
from .errors import RVoxelMapError
from .evaluation import Trajectory, ate_rmse
from .geometry import PoseCov, WorldPoint, lidar_point_covariances, \
    transform_points
from .io import (load_dataset_scans, read_trajectory_tum, write_dataset,
                 write_map_ply, write_trajectory_tum)
from .odometry import OdometryPipeline, downsample_voxel
from .synthetic import corridor_scene, generate_scene_scan, \
    trajectory_corridor
from .timing import StageTimer
from .voxel_map import VoxelMap, iter_planes

log = logging.getLogger("rvoxelmap")

_LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO,
               "warn": logging.WARNING, "warning": logging.WARNING}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rvm", description="Adaptive voxel-map LiDAR odometry tools")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--max-scans", type=int,
                       help="process at most N scans")
        p.add_argument("--output", help="override output directory")

    p_odo = sub.add_parser("odometry",
                           help="dataset -> trajectory and metrics")
    common(p_odo)
    p_map = sub.add_parser("build-map",
                           help="scans + poses -> map stats and PLY export")
    common(p_map)
    p_eval = sub.add_parser("eval", help="compare two TUM trajectories")
    p_eval.add_argument("estimate", help="estimated trajectory (TUM)")
    p_eval.add_argument("reference", help="reference trajectory (TUM)")
    p_synth = sub.add_parser("synth",
                             help="write a synthetic corridor dataset")
    common(p_synth)
    return parser


def _require_config(args, parser) -> RunConfig:
    if not args.config or not Path(args.config).exists():
        sys.stderr.write(parser.format_usage())
        sys.stderr.write("error: --config PATH is required and must exist\n")
        return None
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.max_scans is not None:
        cfg.max_scans = args.max_scans
    if args.output is not None:
        cfg.output_dir = args.output
    return cfg


def cmd_odometry(cfg: RunConfig) -> int:
    scans, times = load_dataset_scans(cfg.dataset_dir)
    limit = cfg.max_scans if cfg.max_scans > 0 else len(scans)
    scans, times = scans[:limit], times[:limit]

    pipeline = OdometryPipeline(cfg.map, cfg.odometry, seed=cfg.seed)
    for i, (scan, t) in enumerate(zip(scans, times)):
        pose = pipeline.process_scan(scan, t)
        log.debug("scan %d t=%.3f pos=%s", i, t,
                  np.array2string(pose.translation, precision=3))
        if (i + 1) % 50 == 0:
            log.info("processed %d/%d scans", i + 1, len(scans))

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj = Trajectory.from_pairs(pipeline.trajectory)
    write_trajectory_tum(traj, out / "trajectory.txt")
    log.info("%s", pipeline.timer.format_report(len(scans)))

    lines = [f"scans = {len(scans)}",
             f"divergent_frames = {pipeline.divergent_frames}",
             f"map_voxels = {len(pipeline.map)}",
             f"map_planes = {sum(1 for _ in pipeline.map.all_planes())}"]
    gt_path = Path(cfg.groundtruth) if cfg.groundtruth else \
        Path(cfg.dataset_dir) / "groundtruth.txt"
    if gt_path.exists():
        ate = ate_rmse(traj, read_trajectory_tum(gt_path))
        lines.append(f"ate_rmse = {ate:.6f}")
        log.info("ATE RMSE %.4f m over %d scans", ate, len(scans))
    rep = pipeline.timer.report()
    for name, sec in rep.items():
        lines.append(f"time_{name} = {sec:.6f}")
    (out / "metrics.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'trajectory.txt'} and {out / 'metrics.txt'}")
    return 0


def cmd_build_map(cfg: RunConfig) -> int:
    scans, times = load_dataset_scans(cfg.dataset_dir)
    gt_path = Path(cfg.groundtruth) if cfg.groundtruth else \
        Path(cfg.dataset_dir) / "groundtruth.txt"
    if not gt_path.exists():
        raise RVoxelMapError(f"build-map needs a pose file at {gt_path}")
    traj = read_trajectory_tum(gt_path)
    limit = cfg.max_scans if cfg.max_scans > 0 else len(scans)
    limit = min(limit, len(scans), len(traj))

    timer = StageTimer()
    vmap = VoxelMap(cfg.map, seed=cfg.seed)
    vmap.timer = timer
    ocfg = cfg.odometry
    for i in range(limit):
        pts = downsample_voxel(np.asarray(scans[i], dtype=float),
                               ocfg.downsample)
        covs = lidar_point_covariances(pts, ocfg.range_sigma,
                                       ocfg.bearing_sigma_deg)
        with timer.stage("total"):
            with timer.stage("map_update"):
                wpos, wcov = transform_points(pts, covs, traj.poses[i],
                                              PoseCov.zero())
                vmap.insert_scan([WorldPoint(wpos[k], wcov[k])
                                  for k in range(wpos.shape[0])])

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_map_ply(vmap, out / "map.ply")
    log.info("%s", timer.format_report(limit))
    n_planes = sum(1 for _ in vmap.all_planes())
    print(f"map: {len(vmap)} voxels, {n_planes} planes, "
          f"{vmap.stats.rebuilds} rebuilds, "
          f"{vmap.stats.evictions} evictions -> {out / 'map.ply'}")
    return 0


def cmd_eval(args) -> int:
    est = read_trajectory_tum(args.estimate)
    ref = read_trajectory_tum(args.reference)
    print(f"ATE {ate_rmse(est, ref):.3f}")
    return 0


def cmd_synth(cfg: RunConfig) -> int:
    scene = corridor_scene(cfg.scene_length, cfg.scene_width,
                           cfg.scene_height, cfg.outlier_ratio,
                           cfg.noise_sigma, cfg.seed)
    poses = trajectory_corridor(cfg.scene_length, cfg.num_scans)
    times = [i * cfg.odometry.scan_dt for i in range(cfg.num_scans)]
    scans = []
    for i, pose in enumerate(poses):
        spec_i = dataclasses.replace(scene, seed=cfg.seed + i)
        scans.append(generate_scene_scan(spec_i, pose, cfg.rays).points)
    out = write_dataset(cfg.output_dir, scans, poses, times)
    save_config(cfg, out / "run.cfg")
    print(f"wrote {cfg.num_scans} scans to {out}")
    return 0


def main(argv=None) -> int:
    level = _LOG_LEVELS.get(os.environ.get("RVM_LOG", "info").lower(),
                            logging.INFO)
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "eval":
            return cmd_eval(args)
        cfg = _require_config(args, parser)
        if cfg is None:
            return 2
        if args.command == "odometry":
            return cmd_odometry(cfg)
        if args.command == "build-map":
            return cmd_build_map(cfg)
        if args.command == "synth":
            return cmd_synth(cfg)
        return 2
    except (RVoxelMapError, OSError) as exc:
        log.error("%s", exc)
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
