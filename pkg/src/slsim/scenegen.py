"""Deterministic clutter synthesis: voxel pose sampling and gravity settling.

Everything happens in the bin's local frame (interior floor at z = 0, +z up)
and the built scene places the bin at the identity pose, so local equals
world. Full rigid-body dynamics is deliberately out of scope: instances drop
straight down with frozen orientation onto a height field, which is enough
to produce dense occluding piles reproducibly. Externally simulated poses
can be imported instead (see load_pose_list).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapacityExceeded, ConfigError, DoesNotFit, IoFailure
from .geometry import Pose, TriMesh
from .scene import (AreaLight, BinBox, Material, SceneDescription,
                    SceneInstance)

MAX_INSTANCES = 255
CELLS_PER_VOXEL = 8          # height-field cells per voxel edge
CONTACT_TOL = 1e-4           # meters; acceptance band for resting contact
_MASK64 = (1 << 64) - 1
_GOLD64 = 0x9E3779B97F4A7C15


def _mix64(x: int) -> int:
    x &= _MASK64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _MASK64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _MASK64
    x ^= x >> 31
    return x


def derive_scene_seed(base_seed: int, scene_index: int) -> int:
    """Decorrelated per-scene seed from a dataset-level base seed."""
    return _mix64((base_seed + (scene_index + 1) * _GOLD64) & _MASK64)


def _origin_radius(mesh: TriMesh) -> float:
    """Largest vertex distance from the mesh's local origin."""
    return float(np.linalg.norm(mesh.vertices, axis=1).max())


@dataclass(frozen=True)
class ClutterConfig:
    """Sampling parameters for one cluttered bin.

    `voxel_edge` defaults to the mesh bounding-sphere diameter. The voxel
    grid is inset from the walls by the mesh's origin radius so any sampled
    orientation keeps the footprint inside the bin.
    """

    mesh: TriMesh
    count: int
    bin_inner_size: tuple[float, float, float]
    seed: int
    voxel_edge: float | None = None
    drop_height: tuple[float, float] = (0.0, 0.5)
    orientation_mode: str = "so3"

    def __post_init__(self) -> None:
        if self.count < 0:
            raise ConfigError(f"count must be non-negative, got {self.count}")
        if self.count > MAX_INSTANCES:
            raise CapacityExceeded(
                f"count {self.count} exceeds the {MAX_INSTANCES}-instance limit")
        size = tuple(float(c) for c in self.bin_inner_size)
        if len(size) != 3 or any(c <= 0.0 for c in size):
            raise ConfigError(f"bin inner size must be 3 positive edges, got {size}")
        object.__setattr__(self, "bin_inner_size", size)
        if self.voxel_edge is None:
            object.__setattr__(self, "voxel_edge",
                               2.0 * self.mesh.bounding_sphere_radius)
        if self.voxel_edge <= 0.0:
            raise ConfigError(f"voxel edge must be positive, got {self.voxel_edge}")
        lo, hi = float(self.drop_height[0]), float(self.drop_height[1])
        if lo < 0.0 or hi < lo:
            raise ConfigError(f"drop height range must satisfy 0 <= lo <= hi, "
                              f"got ({lo}, {hi})")
        object.__setattr__(self, "drop_height", (lo, hi))
        if self.orientation_mode not in ("so3", "yaw"):
            raise ConfigError(
                f"orientation_mode must be 'so3' or 'yaw', got "
                f"{self.orientation_mode!r}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {self.seed}")


def voxel_centers(config: ClutterConfig) -> np.ndarray:
    """Centers of the sampling grid above the bin rim, (N, 3), fixed order.

    Order is x-fastest, then y, then z layer; the grid is centered in the
    inset XY region.
    """
    ix, iy, iz = config.bin_inner_size
    edge = config.voxel_edge
    inset = _origin_radius(config.mesh)
    span_x = ix - 2.0 * inset
    span_y = iy - 2.0 * inset
    nx = int(span_x // edge) if span_x > 0 else 0
    ny = int(span_y // edge) if span_y > 0 else 0
    lo, hi = config.drop_height
    nz = max(1, int((hi - lo) // edge))
    if nx < 1 or ny < 1:
        return np.zeros((0, 3))
    x0 = -span_x / 2.0 + (span_x - nx * edge) / 2.0 + edge / 2.0
    y0 = -span_y / 2.0 + (span_y - ny * edge) / 2.0 + edge / 2.0
    z0 = iz + lo + edge / 2.0
    centers = np.empty((nx * ny * nz, 3))
    i = 0
    for k in range(nz):
        for j in range(ny):
            for m in range(nx):
                centers[i, 0] = x0 + m * edge
                centers[i, 1] = y0 + j * edge
                centers[i, 2] = z0 + k * edge
                i += 1
    return centers


def _quat_to_matrix(w: float, x: float, y: float, z: float) -> np.ndarray:
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _random_rotation(rng: np.random.Generator, mode: str) -> np.ndarray:
    if mode == "yaw":
        theta = rng.uniform(0.0, 2.0 * math.pi)
        c, s = math.cos(theta), math.sin(theta)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    while True:
        q = rng.standard_normal(4)
        norm = np.linalg.norm(q)
        if norm > 1e-12:
            break
    q /= norm
    return _quat_to_matrix(q[0], q[1], q[2], q[3])


def sample_poses(config: ClutterConfig) -> list[Pose]:
    """`count` poses at distinct voxel centers with random orientations.

    The voxel permutation is drawn before any orientation, so the chosen
    cells for a given seed do not depend on count.
    """
    centers = voxel_centers(config)
    if config.count > len(centers):
        raise CapacityExceeded(
            f"requested {config.count} instances but the grid holds only "
            f"{len(centers)} voxels")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(centers))
    poses = []
    for i in range(config.count):
        rotation = _random_rotation(rng, config.orientation_mode)
        poses.append(Pose(rotation=rotation, translation=centers[perm[i]]))
    return poses


@dataclass
class HeightField:
    """Max occupied height per (x, y) cell over the bin interior."""

    values: np.ndarray  # (ncy, ncx), meters above the bin floor
    cell_x: float
    cell_y: float
    origin: tuple[float, float]  # world (x, y) of the grid corner

    @classmethod
    def for_bin(cls, bin_box: BinBox, cell_size: float) -> "HeightField":
        if cell_size <= 0.0:
            raise ConfigError(f"cell size must be positive, got {cell_size}")
        ix, iy, _ = bin_box.inner_size
        ncx = max(1, math.ceil(ix / cell_size))
        ncy = max(1, math.ceil(iy / cell_size))
        return cls(values=np.zeros((ncy, ncx)),
                   cell_x=ix / ncx, cell_y=iy / ncy,
                   origin=(-ix / 2.0, -iy / 2.0))

    def _cells(self, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        jx = np.clip(((xy[:, 0] - self.origin[0]) / self.cell_x).astype(np.int64),
                     0, self.values.shape[1] - 1)
        jy = np.clip(((xy[:, 1] - self.origin[1]) / self.cell_y).astype(np.int64),
                     0, self.values.shape[0] - 1)
        return jy, jx

    def support(self, xy: np.ndarray) -> np.ndarray:
        jy, jx = self._cells(xy)
        return self.values[jy, jx]

    def raise_to(self, points: np.ndarray) -> None:
        jy, jx = self._cells(points[:, :2])
        np.maximum.at(self.values, (jy, jx), points[:, 2])


def surface_samples(mesh: TriMesh, spacing: float) -> np.ndarray:
    """Barycentric-grid samples over every face, spacing-capped per edge.

    Includes all vertices, so the lowest sample never sits above the lowest
    vertex. Rotation preserves distances, so local spacing holds in world.
    """
    if spacing <= 0.0:
        raise ConfigError(f"spacing must be positive, got {spacing}")
    verts = mesh.vertices
    tris = mesh.triangles
    chunks = []
    for t in range(tris.shape[0]):
        a = verts[tris[t, 0]]
        b = verts[tris[t, 1]]
        c = verts[tris[t, 2]]
        longest = max(np.linalg.norm(b - a), np.linalg.norm(c - a),
                      np.linalg.norm(c - b))
        n = min(256, max(1, math.ceil(longest / spacing)))
        ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
        keep = (ii + jj) <= n
        u = ii[keep] / n
        v = jj[keep] / n
        chunks.append(a + np.outer(u, b - a) + np.outer(v, c - a))
    return np.concatenate(chunks)


def settle(poses: list[Pose], mesh: TriMesh, bin_box: BinBox,
           cell_size: float | None = None,
           height_field: HeightField | None = None) -> list[Pose]:
    """Drop each pose vertically onto the evolving height field.

    Orientations are frozen; instances are processed in order and rasterized
    into the field after contact, so later drops stack on earlier ones.
    A pose already embedded in the pile is lifted to contact instead of
    passing through it.
    """
    if cell_size is None:
        cell_size = 2.0 * mesh.bounding_sphere_radius / CELLS_PER_VOXEL
    if height_field is None:
        height_field = HeightField.for_bin(bin_box, cell_size)
    spacing = min(height_field.cell_x, height_field.cell_y) / 2.0
    local = surface_samples(mesh, spacing)
    hx = bin_box.inner_size[0] / 2.0
    hy = bin_box.inner_size[1] / 2.0
    settled = []
    for index, pose in enumerate(poses):
        world = local @ pose.rotation.T + pose.translation
        if (world[:, 0].min() < -hx - 1e-9 or world[:, 0].max() > hx + 1e-9
                or world[:, 1].min() < -hy - 1e-9
                or world[:, 1].max() > hy + 1e-9):
            raise DoesNotFit(
                f"instance {index + 1} footprint exceeds the bin interior")
        drop = float((world[:, 2] - height_field.support(world[:, :2])).min())
        world[:, 2] -= drop
        translation = pose.translation - np.array([0.0, 0.0, drop])
        height_field.raise_to(world)
        settled.append(Pose(rotation=pose.rotation, translation=translation))
    return settled


def load_pose_list(path: str | Path) -> list[Pose]:
    """Import externally simulated poses: [{instance_id, rotation, translation}].

    Rotation is 9 row-major numbers; ids must be contiguous from 1. Returned
    poses are ordered by instance id and replace sample+settle entirely.
    """
    path = Path(path)
    try:
        records = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read pose list {path}: {exc}") from exc
    if not isinstance(records, list):
        raise ConfigError("pose list must be a JSON array")
    by_id = {}
    for rec in records:
        unknown = set(rec) - {"instance_id", "rotation", "translation"}
        if unknown:
            raise ConfigError(f"unknown pose keys: {sorted(unknown)}")
        try:
            iid = int(rec["instance_id"])
            rot = np.asarray(rec["rotation"], dtype=np.float64).reshape(3, 3)
            tra = np.asarray(rec["translation"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"malformed pose record: {exc}") from exc
        if iid in by_id:
            raise ConfigError(f"duplicate instance id {iid}")
        by_id[iid] = Pose(rotation=rot, translation=tra)
    ids = sorted(by_id)
    if ids != list(range(1, len(ids) + 1)):
        raise ConfigError(f"instance ids must be contiguous from 1, got {ids}")
    return [by_id[i] for i in ids]


def build_scene(config: ClutterConfig, material,
                area_lights: tuple[AreaLight, ...] = (),
                ambient_light=(0.05, 0.05, 0.05),
                bin_material: Material | None = None,
                wall_thickness: float = 0.02,
                class_label: str = "object",
                poses: list[Pose] | None = None) -> SceneDescription:
    """Compose bin, settled instances, and lights into a SceneDescription.

    `material` is either one Material for every instance or a sequence
    cycled in drop order. When `poses` is given, sampling and settling are
    skipped and the poses are used as-is.
    """
    if poses is None:
        initial = sample_poses(config)
        poses = settle(initial, config.mesh, BinBox(
            inner_size=config.bin_inner_size, wall_thickness=wall_thickness),
            cell_size=config.voxel_edge / CELLS_PER_VOXEL)
    materials = ([material] if isinstance(material, Material)
                 else list(material))
    if not materials:
        raise ConfigError("at least one instance material is required")
    bin_kwargs = {} if bin_material is None else {"material": bin_material}
    bin_box = BinBox(inner_size=config.bin_inner_size,
                     wall_thickness=wall_thickness, **bin_kwargs)
    instances = tuple(
        SceneInstance(mesh=config.mesh, pose=pose, instance_id=i + 1,
                      class_label=class_label,
                      material=materials[i % len(materials)])
        for i, pose in enumerate(poses))
    return SceneDescription(instances=instances, bin=bin_box,
                            ambient_light=ambient_light,
                            area_lights=tuple(area_lights),
                            seed=config.seed)
