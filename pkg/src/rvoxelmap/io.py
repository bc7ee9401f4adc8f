"""Scan, trajectory, and map snapshot file formats.

Scans: KITTI velodyne .bin (little-endian float32 x,y,z,intensity) and
ASCII PLY. Trajectories: TUM text (timestamp tx ty tz qx qy qz qw). Map
snapshots: ASCII PLY with the raw stored points plus one quad face per
plane patch sized by the in-plane eigenvalues.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .errors import MalformedFile
from .evaluation import Trajectory
from .geometry import Pose, quaternion_to_rotation, rotation_to_quaternion
from .voxel_map import VoxelMap, iter_planes


def read_scan_kitti_bin(path) -> tuple[np.ndarray, np.ndarray]:
    """KITTI velodyne scan: returns (points (N, 3), intensities (N,)).

    Raises:
        MalformedFile: size not a multiple of 16 bytes, or non-finite data.
    """
    raw = Path(path).read_bytes()
    if len(raw) % 16 != 0:
        raise MalformedFile(f"{path}: size {len(raw)} not divisible by 16")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    if not np.isfinite(data).all():
        raise MalformedFile(f"{path}: non-finite values")
    return data[:, 0:3].astype(float), data[:, 3].astype(float)


def read_scan_ply_ascii(path) -> np.ndarray:
    """ASCII PLY vertex positions as an (N, 3) array; extra vertex
    properties are ignored.

    Raises:
        MalformedFile: bad header, wrong row count, or malformed rows.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MalformedFile(f"{path}: missing ply magic")
    n_vertex = None
    props = []
    in_vertex = False
    body_at = None
    for k, line in enumerate(lines[1:], start=1):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise MalformedFile(f"{path}: only ascii PLY supported")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_at = k + 1
            break
    if n_vertex is None or body_at is None:
        raise MalformedFile(f"{path}: incomplete header")
    try:
        cols = [props.index(axis) for axis in ("x", "y", "z")]
    except ValueError:
        raise MalformedFile(f"{path}: vertex element lacks x/y/z")
    rows = [line.split() for line in lines[body_at:] if line.strip()]
    rows = rows[:n_vertex] if len(rows) > n_vertex else rows
    if len(rows) < n_vertex:
        raise MalformedFile(f"{path}: expected {n_vertex} vertices, got "
                            f"{len(rows)}")
    out = np.empty((n_vertex, 3))
    try:
        for i, tok in enumerate(rows):
            for a, c in enumerate(cols):
                out[i, a] = float(tok[c])
    except (ValueError, IndexError) as exc:
        raise MalformedFile(f"{path}: bad vertex row: {exc}")
    if not np.isfinite(out).all():
        raise MalformedFile(f"{path}: non-finite vertex values")
    return out


def write_scan_ply(points: np.ndarray, path):
    """Write sensor points as a minimal ASCII PLY."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {pts.shape[0]}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("end_header\n")
        for p in pts:
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def write_map_ply(vmap: VoxelMap, path):
    """Map snapshot: every stored point as a vertex, plus a quad face per
    plane, its corners at centroid +/- 2 sigma along the in-plane axes."""
    point_rows = []
    quad_rows = []
    faces = []
    for key, entry in vmap._table.items():
        stack = [entry.root]
        while stack:
            node = stack.pop()
            for p in node.plane_points:
                point_rows.append(p.position)
            for p in node.non_plane_points:
                point_rows.append(p.position)
            if node.children is not None:
                stack.extend(c for c in node.children if c is not None)
        for _, plane in iter_planes(entry.root):
            e1 = 2.0 * math.sqrt(max(plane.eigvals[0], 0.0)) \
                * plane.eigvecs[:, 0]
            e2 = 2.0 * math.sqrt(max(plane.eigvals[1], 0.0)) \
                * plane.eigvecs[:, 1]
            q = plane.centroid
            base = len(point_rows) + len(quad_rows)
            quad_rows += [q - e1 - e2, q + e1 - e2, q + e1 + e2, q - e1 + e2]
            faces.append((base, base + 1, base + 2, base + 3))
    vertices = point_rows + quad_rows
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {len(vertices)}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write(f"element face {len(faces)}\n")
        f.write("property list uchar int vertex_indices\n")
        f.write("end_header\n")
        for p in vertices:
            f.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for a, b, c, d in faces:
            f.write(f"4 {a} {b} {c} {d}\n")


def write_trajectory_tum(traj: Trajectory, path):
    """TUM format: `timestamp tx ty tz qx qy qz qw`, one pose per line."""
    with open(path, "w", newline="\n") as f:
        for t, pose in zip(traj.timestamps, traj.poses):
            qx, qy, qz, qw = rotation_to_quaternion(pose.rotation)
            tx, ty, tz = pose.translation
            vals = " ".join(f"{v:.9g}" for v in (tx, ty, tz, qx, qy, qz, qw))
            f.write(f"{t:.8f} {vals}\n")


def read_trajectory_tum(path) -> Trajectory:
    """Parse a TUM trajectory file.

    Raises:
        MalformedFile: wrong field count or non-finite values.
    """
    times = []
    poses = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        tok = line.split()
        if len(tok) != 8:
            raise MalformedFile(f"{path}:{ln}: expected 8 fields, got "
                                f"{len(tok)}")
        try:
            vals = [float(v) for v in tok]
        except ValueError as exc:
            raise MalformedFile(f"{path}:{ln}: {exc}")
        if not all(math.isfinite(v) for v in vals):
            raise MalformedFile(f"{path}:{ln}: non-finite value")
        t, tx, ty, tz, qx, qy, qz, qw = vals
        rot = quaternion_to_rotation(np.array([qx, qy, qz, qw]))
        times.append(t)
        poses.append(Pose(rot, np.array([tx, ty, tz])))
    return Trajectory(np.array(times), poses)


def write_dataset(out_dir, scans: list, poses: list, timestamps) -> Path:
    """Write a scan directory consumable by the odometry CLI: sensor-frame
    PLY scans, a times.txt, and the ground-truth trajectory in TUM format."""
    out = Path(out_dir)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    for i, scan in enumerate(scans):
        write_scan_ply(scan, out / "scans" / f"{i:06d}.ply")
    with open(out / "times.txt", "w") as f:
        for t in timestamps:
            f.write(f"{t:.8f}\n")
    traj = Trajectory(np.asarray(timestamps, dtype=float), list(poses))
    write_trajectory_tum(traj, out / "groundtruth.txt")
    return out


def load_dataset_scans(dataset_dir) -> tuple[list, np.ndarray]:
    """Scan arrays plus timestamps from a dataset directory.

    Accepts `scans/*.ply` or `scans/*.bin` (KITTI), sorted by filename;
    timestamps come from times.txt when present, else 0.1 s spacing.
    """
    root = Path(dataset_dir)
    scan_dir = root / "scans" if (root / "scans").is_dir() else root
    files = sorted(scan_dir.glob("*.ply")) + sorted(scan_dir.glob("*.bin"))
    if not files:
        raise MalformedFile(f"no .ply or .bin scans under {scan_dir}")
    scans = []
    for f in files:
        if f.suffix == ".bin":
            pts, _ = read_scan_kitti_bin(f)
        else:
            pts = read_scan_ply_ascii(f)
        scans.append(pts)
    times_file = root / "times.txt"
    if times_file.exists():
        times = np.array([float(s) for s in
                          times_file.read_text().split()])
        if times.shape[0] != len(scans):
            raise MalformedFile(f"{times_file}: {times.shape[0]} stamps for "
                                f"{len(scans)} scans")
    else:
        times = np.arange(len(scans), dtype=float) * 0.1
    return scans, times
