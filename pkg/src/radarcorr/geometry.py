"""Point clouds, rigid transforms, field-of-view filtering and zero padding."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9


class GeometryError(ValueError):
    pass


def _as_points(points) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.size == 0:
        return np.zeros((0, 3))
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise GeometryError(f"points must have shape (n, 3), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points in one sensor frame. Row index is point identity."""

    points: np.ndarray
    timestamp: float = 0.0
    frame_id: str = "radar"

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))

    def __len__(self) -> int:
        return self.points.shape[0]

    def check_finite(self) -> None:
        bad = ~np.isfinite(self.points).all(axis=1)
        if bad.any():
            rows = np.flatnonzero(bad).tolist()
            raise GeometryError(f"non-finite coordinates at point indices {rows}")

    def with_points(self, points) -> "PointCloud":
        return PointCloud(points, self.timestamp, self.frame_id)


@dataclass(frozen=True)
class PoseSE3:
    """Rigid transform x -> rotation @ x + translation."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_quaternion(cls, q, translation) -> "PoseSE3":
        return cls(quat_to_rotation(q), translation)

    def validate(self, tol: float = ORTHO_TOL) -> None:
        r = self.rotation
        if not (np.isfinite(r).all() and np.isfinite(self.translation).all()):
            raise GeometryError("pose contains non-finite entries")
        if np.abs(r.T @ r - np.eye(3)).max() > tol:
            raise GeometryError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > tol:
            raise GeometryError("rotation determinant is not +1")

    def inverse(self) -> "PoseSE3":
        rt = self.rotation.T
        return PoseSE3(rt, -rt @ self.translation)

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        """Return self ∘ other (apply ``other`` first)."""
        return PoseSE3(self.rotation @ other.rotation,
                       self.rotation @ other.translation + self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return _as_points(points) @ self.rotation.T + self.translation

    def quaternion(self) -> np.ndarray:
        return rotation_to_quat(self.rotation)


def quat_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion. The quaternion is normalised first."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_to_quat(r: np.ndarray) -> np.ndarray:
    # Shepperd's method, w >= 0 canonical sign
    r = np.asarray(r, dtype=np.float64)
    tr = np.trace(r)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2])
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s,
                      (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = 2.0 * np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2])
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s,
                      0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1])
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s,
                      (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues' formula."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * kx + (1 - np.cos(angle)) * kx @ kx


def random_pose(rng: np.random.Generator, max_angle: float = np.pi,
                max_translation: float = 1.0) -> PoseSE3:
    axis = rng.normal(size=3)
    angle = rng.uniform(-max_angle, max_angle)
    t = rng.uniform(-max_translation, max_translation, size=3)
    return PoseSE3(rotation_about_axis(axis, angle), t)


def transform_points(cloud: PointCloud, pose: PoseSE3) -> PointCloud:
    """Apply ``pose`` to every point, keeping order, timestamp and frame label."""
    pose.validate()
    cloud.check_finite()
    return cloud.with_points(pose.apply(cloud.points))


@dataclass(frozen=True)
class FovSpec:
    """Closed azimuth/elevation/range box. Angles in radians, range in meters."""

    azimuth_min: float = -np.deg2rad(60.0)
    azimuth_max: float = np.deg2rad(60.0)
    elevation_min: float = -np.deg2rad(15.0)
    elevation_max: float = np.deg2rad(15.0)
    range_min: float = 0.2
    range_max: float = 12.0

    def __post_init__(self):
        pairs = [(self.azimuth_min, self.azimuth_max),
                 (self.elevation_min, self.elevation_max),
                 (self.range_min, self.range_max)]
        if any(lo >= hi for lo, hi in pairs):
            raise GeometryError("FovSpec requires min < max for every interval")
        if self.range_min < 0:
            raise GeometryError("range_min must be non-negative")

    def contains(self, points) -> np.ndarray:
        """Boolean mask of points inside the field of view."""
        p = _as_points(points)
        az, el, rng = spherical(p)
        return ((az >= self.azimuth_min) & (az <= self.azimuth_max)
                & (el >= self.elevation_min) & (el <= self.elevation_max)
                & (rng >= self.range_min) & (rng <= self.range_max))

    def as_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}


def spherical(points: np.ndarray):
    """Azimuth, elevation and range of each row of ``points``."""
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    az = np.arctan2(y, x)
    el = np.arctan2(z, np.hypot(x, y))
    return az, el, np.linalg.norm(points, axis=1)


def fov_filter(cloud: PointCloud, fov: FovSpec) -> PointCloud:
    return cloud.with_points(cloud.points[fov.contains(cloud.points)])


@dataclass(frozen=True)
class PaddedCloud:
    """(n_max + 1) x 3 matrix: zero row 0, points in rows 1..valid_count, zeros after."""

    matrix: np.ndarray
    valid_count: int

    @property
    def n_max(self) -> int:
        return self.matrix.shape[0] - 1

    def points(self) -> np.ndarray:
        return self.matrix[1:self.valid_count + 1]


class CloudTooLongError(GeometryError):
    pass


def pad_cloud(cloud: PointCloud | np.ndarray, n_max: int) -> PaddedCloud:
    pts = cloud.points if isinstance(cloud, PointCloud) else _as_points(cloud)
    n = pts.shape[0]
    if n > n_max:
        raise CloudTooLongError(
            f"cloud has {n} points but n_max is {n_max}; recompute the dataset-wide N")
    mat = np.zeros((n_max + 1, 3))
    mat[1:n + 1] = pts
    return PaddedCloud(mat, n)
