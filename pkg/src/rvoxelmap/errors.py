"""Exception types shared across the package."""


class RVoxelMapError(Exception):
    """Base class for all package-specific errors."""


class DegenerateInput(RVoxelMapError):
    """Input geometry cannot support the requested model (e.g. all RANSAC
    samples collinear)."""


class EigengapTooSmall(RVoxelMapError):
    """Plane direction is ill-defined: the two smallest eigenvalues of the
    scatter matrix are too close for the normal Jacobian to exist."""


class NoPlane(RVoxelMapError):
    """The octree subtree holds no plane to update against."""


class InsufficientMatches(RVoxelMapError):
    """Too few scan points found a plane correspondence for a pose update."""


class MalformedFile(RVoxelMapError):
    """A dataset or trajectory file does not follow its declared format."""


class NoOverlap(RVoxelMapError):
    """Two trajectories share fewer than two associable timestamps."""


class EmptyScene(RVoxelMapError):
    """No scene plane is visible from the requested sensor pose."""


class ConfigError(RVoxelMapError):
    """A configuration file is missing, unreadable, or carries unknown keys."""
