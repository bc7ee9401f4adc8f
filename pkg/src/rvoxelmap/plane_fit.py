"""Robust probabilistic plane fitting.

A plane is extracted in three steps: a RANSAC partition separates outliers
from inliers, an eigendecomposition of the inlier scatter matrix gives the
plane parameters, and first-order propagation of the per-point covariances
gives a 6x6 covariance over (normal, centroid).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput, EigengapTooSmall
from .geometry import WorldPoint

# below this gap between the two smallest eigenvalues the normal direction is
# ill-defined and the Jacobian denominators blow up
EIGENGAP_TOL = 1e-8


@dataclass
class RansacResult:
    """Index partition of the input set plus the winning 3-point model."""

    inliers: list[int]
    outliers: list[int]
    model_normal: np.ndarray
    model_offset: float


@dataclass
class Plane:
    """Probabilistic plane: unit normal, centroid, eigen-structure, 6x6
    parameter covariance, and the sufficient statistics (point count and
    second moment) needed for incremental updates."""

    normal: np.ndarray
    centroid: np.ndarray
    eigvals: np.ndarray          # descending, (3,)
    eigvecs: np.ndarray          # columns match eigvals; normal is column 2
    param_cov: np.ndarray        # 6x6 over (normal, centroid)
    num_points: int
    moment: np.ndarray           # sum of p p^T over the fitted points
    converged: bool = False

    @property
    def lambda_min(self) -> float:
        return float(self.eigvals[2])


def fix_normal_sign(n: np.ndarray) -> np.ndarray:
    """Resolve the eigenvector sign ambiguity: make the largest-magnitude
    component positive."""
    k = int(np.argmax(np.abs(n)))
    return -n if n[k] < 0.0 else n


def stack_points(points) -> tuple[np.ndarray, np.ndarray]:
    """(positions (N,3), covariances (N,3,3)) from a WorldPoint sequence."""
    pos = np.array([p.position for p in points])
    cov = np.array([p.cov for p in points])
    return pos, cov


def ransac_partition(points, d_th: float, iterations: int,
                     rng_seed) -> RansacResult:
    """Partition points into inliers/outliers of the best sampled plane.

    Runs `iterations` hypothesis rounds; each samples 3 non-collinear points,
    forms the plane through them, and counts points within distance d_th.
    The max-inlier hypothesis wins, ties broken by lower mean absolute
    distance. Deterministic for a given seed.

    Args:
        points: sequence of WorldPoint (covariances unused here).
        d_th: inlier distance threshold in meters.
        iterations: number of hypothesis rounds.
        rng_seed: integer seed or a numpy Generator.

    Raises:
        DegenerateInput: every sampled triple was collinear.
    """
    if len(points) < 3:
        raise DegenerateInput(f"need >= 3 points, got {len(points)}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) \
        else np.random.default_rng(rng_seed)
    positions = np.array([p.position for p in points])
    n_pts = len(points)

    best = None  # (count, mean_abs_dist, mask, normal, offset)
    for _ in range(iterations):
        i0, i1, i2 = rng.choice(n_pts, size=3, replace=False)
        e1 = positions[i1] - positions[i0]
        e2 = positions[i2] - positions[i0]
        cr = np.cross(e1, e2)
        cr_norm = np.linalg.norm(cr)
        if cr_norm <= 1e-9 * (np.linalg.norm(e1) * np.linalg.norm(e2) + 1e-300):
            continue
        normal = cr / cr_norm
        dists = np.abs((positions - positions[i0]) @ normal)
        mask = dists <= d_th
        count = int(mask.sum())
        mean_dist = float(dists[mask].mean())
        if best is None or count > best[0] or (count == best[0]
                                               and mean_dist < best[1]):
            best = (count, mean_dist, mask, normal, float(normal @ positions[i0]))

    if best is None:
        raise DegenerateInput("all RANSAC samples were collinear")

    _, _, mask, normal, offset = best
    fixed = fix_normal_sign(normal)
    if fixed @ normal < 0.0:         # sign flip must carry to the offset
        offset = -offset
    idx = np.arange(n_pts)
    return RansacResult(inliers=idx[mask].tolist(),
                        outliers=idx[~mask].tolist(),
                        model_normal=fixed, model_offset=offset)


def eig_descending(scatter: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric 3x3, eigenvalues descending and
    every eigenvector sign-fixed (largest-magnitude component positive)."""
    vals, vecs = np.linalg.eigh(scatter)       # ascending
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1].copy()
    for m in range(3):
        vecs[:, m] = fix_normal_sign(vecs[:, m])
    return vals, vecs


def _fit_arrays(positions: np.ndarray):
    """Moment fit over an (N, 3) array; shared by list and batch callers."""
    n_pts = positions.shape[0]
    q = positions.mean(axis=0)
    moment = positions.T @ positions
    scatter = moment / n_pts - np.outer(q, q)
    scatter = 0.5 * (scatter + scatter.T)
    vals, vecs = eig_descending(scatter)
    return q, scatter, moment, vals, vecs


def fit_plane_moments(points):
    """Centroid/moment/scatter plane fit by eigendecomposition.

    Returns (q, A, S, eigvals, eigvecs) where q is the centroid, S the raw
    second moment sum(p p^T), A = S/N - q q^T the scatter matrix, eigvals
    sorted descending, and eigvecs the matching orthonormal columns with a
    deterministic sign (largest-magnitude component positive). The plane
    normal is column 2.
    """
    if len(points) < 3:
        raise DegenerateInput(f"need >= 3 points, got {len(points)}")
    positions = np.array([p.position for p in points])
    return _fit_arrays(positions)


def plane_point_jacobian(plane: Plane, p_i: np.ndarray, num_points: int) -> np.ndarray:
    """6x3 Jacobian of (normal, centroid) with respect to one fitted point.

    The normal block follows eigenvector perturbation of the scatter matrix;
    the centroid block is I/N.

    Raises:
        EigengapTooSmall: the two smallest eigenvalues are too close for the
            normal direction to be differentiable.
    """
    lam = plane.eigvals
    if lam[1] - lam[2] < EIGENGAP_TOL:
        raise EigengapTooSmall(
            f"eigengap {lam[1] - lam[2]:.3e} below {EIGENGAP_TOL:.0e}")
    u = plane.eigvecs
    n = plane.normal
    diff = p_i - plane.centroid
    f_rows = np.zeros((3, 3))
    for m in range(2):
        sym = np.outer(u[:, m], n) + np.outer(n, u[:, m])
        f_rows[m] = (diff @ sym) / (num_points * (lam[2] - lam[m]))
    jac = np.zeros((6, 3))
    jac[0:3] = u @ f_rows
    jac[3:6] = np.eye(3) / num_points
    return jac


def _jacobians_batch(positions: np.ndarray, q: np.ndarray, lam: np.ndarray,
                     u: np.ndarray) -> np.ndarray:
    """(N, 6, 3) stack of plane_point_jacobian over all points."""
    n_pts = positions.shape[0]
    normal = u[:, 2]
    diffs = positions - q
    f_rows = np.zeros((n_pts, 3, 3))
    for m in range(2):
        sym = np.outer(u[:, m], normal) + np.outer(normal, u[:, m])
        f_rows[:, m, :] = (diffs @ sym) / (n_pts * (lam[2] - lam[m]))
    jac = np.zeros((n_pts, 6, 3))
    jac[:, 0:3, :] = np.einsum("ab,nbc->nac", u, f_rows)
    jac[:, 3:6, :] = np.eye(3) / n_pts
    return jac


def plane_covariance(plane: Plane, points) -> np.ndarray:
    """6x6 covariance of (normal, centroid) from per-point covariances.

    Sums J_i Sigma_i J_i^T over the points the plane was fitted from.
    """
    lam = plane.eigvals
    if lam[1] - lam[2] < EIGENGAP_TOL:
        raise EigengapTooSmall(
            f"eigengap {lam[1] - lam[2]:.3e} below {EIGENGAP_TOL:.0e}")
    positions, covs = stack_points(points)
    jac = _jacobians_batch(positions, plane.centroid, lam, plane.eigvecs)
    cov = np.einsum("nab,nbc,ndc->ad", jac, covs, jac)
    return 0.5 * (cov + cov.T)


def fit_probabilistic_plane(points) -> Plane:
    """Full plane construction: moment fit plus parameter covariance.

    Raises:
        EigengapTooSmall: degenerate eigenstructure (via plane_covariance).
    """
    q, _, moment, vals, vecs = fit_plane_moments(points)
    plane = Plane(normal=vecs[:, 2].copy(), centroid=q, eigvals=vals,
                  eigvecs=vecs, param_cov=np.zeros((6, 6)),
                  num_points=len(points), moment=moment)
    plane.param_cov = plane_covariance(plane, points)
    return plane
