"""Shared generators for the test suite.

Most tests need "a bunch of world points on some plane"; the helpers here
build those deterministically so failures replay. Point clouds meant to
survive the grid validity check use spacings below the default cell edge
(3 m / 8 = 0.375 m).
"""
import numpy as np
import pytest
from hypothesis import settings

from rvoxelmap import WorldPoint

settings.register_profile("suite", deadline=None, max_examples=50)
settings.load_profile("suite")


def world_points(positions, cov=None):
    """Wrap an (N, 3) array as WorldPoints sharing one covariance."""
    positions = np.asarray(positions, dtype=float)
    if cov is None:
        cov = np.zeros((3, 3))
    return [WorldPoint(positions[i].copy(), np.array(cov, dtype=float))
            for i in range(positions.shape[0])]


def plane_grid_positions(origin, axis_u, axis_v, nu, nv, du, dv):
    """(nu*nv, 3) lattice origin + i*du*u + j*dv*v, row-major in i."""
    origin = np.asarray(origin, dtype=float)
    axis_u = np.asarray(axis_u, dtype=float)
    axis_v = np.asarray(axis_v, dtype=float)
    pts = [origin + i * du * axis_u + j * dv * axis_v
           for i in range(nu) for j in range(nv)]
    return np.array(pts)


def random_plane_cloud(rng, n=20, extent=(1.0, 0.6), noise=0.01):
    """Points near a randomly oriented plane through a random centroid.

    Returns (positions, normal, centroid). In-plane spread is anisotropic so
    the eigenstructure is well separated.
    """
    # random orthonormal frame
    a = rng.normal(size=(3, 3))
    frame, _ = np.linalg.qr(a)
    if np.linalg.det(frame) < 0:
        frame[:, 2] = -frame[:, 2]
    center = rng.uniform(-2.0, 2.0, size=3)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2)) * np.asarray(extent)
    w = rng.normal(0.0, noise, size=n)
    pts = center + uv[:, 0:1] * frame[:, 0] + uv[:, 1:2] * frame[:, 1] \
        + w[:, None] * frame[:, 2]
    return pts, frame[:, 2].copy(), center


def random_rotation(rng):
    a = rng.normal(size=(3, 3))
    q, _ = np.linalg.qr(a)
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    return q


def random_psd(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim))
    m = a @ a.T
    return m * (scale / max(np.trace(m), 1e-30))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
