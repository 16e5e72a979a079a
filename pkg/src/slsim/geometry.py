"""Camera/projector pinhole models, SE(3) poses, and projection matrices.

Conventions: extrinsics (R, t) map world to device coordinates,
x_dev = R @ x_world + t, right-handed with +Z forward. Image coordinates
put u along columns and v along rows with the origin at the top-left pixel
center; sub-pixel coordinates are continuous. Zero skew, no distortion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DepthNonPositive

ORTHO_TOL = 1e-9


def _as_rotation(r, tol: float = ORTHO_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if not np.all(np.isfinite(r)):
        raise ValueError("rotation has non-finite entries")
    if np.max(np.abs(r.T @ r - np.eye(3))) > tol:
        raise ValueError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError("rotation determinant is not +1")
    r.flags.writeable = False
    return r


def _as_vec3(t) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(t)):
        raise ValueError("vector has non-finite entries")
    t.flags.writeable = False
    return t


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation (3x3, det +1) plus translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (N,3) or (3,) array of points."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Pose":
        rt = self.rotation.T
        return Pose(rt, -rt @ self.translation)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                   np.asarray(d["translation"], dtype=np.float64))


@dataclass(frozen=True)
class Ray:
    """Origin plus unit direction, meters."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", _as_vec3(self.origin))
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction must be unit length, |d| = {n}")
        d.flags.writeable = False
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class TriMesh:
    """Indexed triangle mesh in meters with a material table reference."""

    vertices: np.ndarray
    triangles: np.ndarray
    material: int = 0

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if t.shape[0] < 1:
            raise ValueError("mesh needs at least one triangle")
        if not np.all(np.isfinite(v)):
            raise ValueError("mesh has non-finite coordinates")
        if t.min(initial=0) < 0 or t.max(initial=-1) >= v.shape[0]:
            raise ValueError("triangle index out of range")
        v.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    @property
    def bounding_sphere_radius(self) -> float:
        """Radius about the vertex centroid."""
        centroid = self.vertices.mean(axis=0)
        return float(np.linalg.norm(self.vertices - centroid, axis=1).max())

    def transformed_vertices(self, pose: Pose) -> np.ndarray:
        return pose.transform(self.vertices)


@dataclass(frozen=True)
class PinholeModel:
    """Intrinsics plus world-to-device extrinsics for a camera or projector."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("resolution must be positive")
        object.__setattr__(self, "rotation", _as_rotation(self.rotation))
        object.__setattr__(self, "translation", _as_vec3(self.translation))

    @property
    def intrinsic_matrix(self) -> np.ndarray:
        """Upper-triangular K with zero skew."""
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def center(self) -> np.ndarray:
        """Device center in world coordinates, -R^T t."""
        return -self.rotation.T @ self.translation

    @classmethod
    def looking_from(cls, fx, fy, cx, cy, width, height,
                     position, orientation) -> "PinholeModel":
        """Build from a world-frame position C and orientation Q.

        Stores R = Q^T and t = -Q^T C so that x_dev = R x_world + t.
        """
        q = np.asarray(orientation, dtype=np.float64)
        c = np.asarray(position, dtype=np.float64)
        return cls(fx, fy, cx, cy, width, height, q.T, -q.T @ c)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PinholeModel":
        required = {"fx", "fy", "cx", "cy", "width", "height",
                    "rotation", "translation"}
        missing = required - set(d)
        if missing:
            raise ConfigError(f"pinhole block missing keys: {sorted(missing)}")
        extra = set(d) - required
        if extra:
            raise ConfigError(f"pinhole block has unknown keys: {sorted(extra)}")
        rotation = np.asarray(d["rotation"], dtype=np.float64)
        if rotation.size != 9:
            raise ConfigError("rotation must have 9 numbers (row-major)")
        try:
            return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]),
                       float(d["cy"]), int(d["width"]), int(d["height"]),
                       rotation.reshape(3, 3),
                       np.asarray(d["translation"], dtype=np.float64))
        except ValueError as e:
            raise ConfigError(f"invalid pinhole model: {e}") from e


@dataclass(frozen=True)
class ProjectionMatrix:
    """3x4 projection matrix m = K [R | t]."""

    m: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("projection matrix has non-finite entries")
        if np.linalg.matrix_rank(m) != 3:
            raise ValueError("projection matrix must have rank 3")
        m.flags.writeable = False
        object.__setattr__(self, "m", m)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Homogeneous application: (N,3) world points -> (N,2) pixels."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        h = pts @ self.m[:, :3].T + self.m[:, 3]
        return h[:, :2] / h[:, 2:3]


def project(point, model: PinholeModel) -> tuple[float, float, float]:
    """Project a world point through a pinhole model.

    Returns (u, v, s) where s is the device-frame depth in meters and (u, v)
    the sub-pixel image coordinates. Coordinates outside the image bounds are
    returned as-is; the caller clips.

    Raises DepthNonPositive if the point is at or behind the device plane.
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    x = model.rotation @ p + model.translation
    s = float(x[2])
    if s <= 1e-12:
        raise DepthNonPositive(f"depth {s} is not positive")
    u = model.fx * x[0] / s + model.cx
    v = model.fy * x[1] / s + model.cy
    return float(u), float(v), s


def project_many(points: np.ndarray, model: PinholeModel) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of (N,3) points.

    Returns (uv (N,2), s (N,)); entries with non-positive depth get NaN uv.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    x = pts @ model.rotation.T + model.translation
    s = x[:, 2].copy()
    with np.errstate(divide="ignore", invalid="ignore"):
        u = model.fx * x[:, 0] / s + model.cx
        v = model.fy * x[:, 1] / s + model.cy
    bad = s <= 1e-12
    u[bad] = np.nan
    v[bad] = np.nan
    return np.stack([u, v], axis=1), s


def build_projection_matrix(model: PinholeModel) -> ProjectionMatrix:
    """M = K [R | t], consistent with project() up to homogeneous division."""
    rt = np.concatenate([model.rotation, model.translation[:, None]], axis=1)
    return ProjectionMatrix(model.intrinsic_matrix @ rt)


def load_rig(path: str | Path) -> tuple[PinholeModel, PinholeModel]:
    """Read a calibration JSON with 'camera' and 'projector' blocks."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read rig file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: rig file must be a JSON object")
    extra = set(data) - {"camera", "projector"}
    if extra:
        raise ConfigError(f"{path}: unknown rig keys: {sorted(extra)}")
    for key in ("camera", "projector"):
        if key not in data:
            raise ConfigError(f"{path}: rig file missing '{key}' block")
    return (PinholeModel.from_dict(data["camera"]),
            PinholeModel.from_dict(data["projector"]))


def save_rig(path: str | Path, camera: PinholeModel, projector: PinholeModel) -> None:
    payload = {"camera": camera.to_dict(), "projector": projector.to_dict()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
