"""Scene description: instances, bin box, lights, and canonical hashing.

World frame: +z up, bin interior floor at z = 0 in the bin's local frame.
Area lights are rectangles facing -z (straight down); they illuminate via
direct light sampling only and are never hit by camera rays.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EmptyScene
from .geometry import Pose, TriMesh


def _as_rgb(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise ConfigError(f"{name} must be an RGB triple, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Material:
    """Per-object shading constants: Lambertian base with a metallic lobe."""

    albedo: np.ndarray   # RGB, each in [0, 1]
    metallic: float = 0.0
    roughness: float = 0.5

    def __post_init__(self) -> None:
        albedo = _as_rgb(self.albedo, "albedo")
        if np.any(albedo < 0.0) or np.any(albedo > 1.0):
            raise ConfigError(f"albedo channels must lie in [0, 1], got {albedo}")
        object.__setattr__(self, "albedo", albedo)
        if not 0.0 <= self.metallic <= 1.0:
            raise ConfigError(f"metallic must lie in [0, 1], got {self.metallic}")
        if not 0.0 < self.roughness <= 1.0:
            raise ConfigError(f"roughness must lie in (0, 1], got {self.roughness}")

    def to_dict(self) -> dict:
        return {
            "albedo": [float(c) for c in self.albedo],
            "metallic": float(self.metallic),
            "roughness": float(self.roughness),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Material":
        unknown = set(d) - {"albedo", "metallic", "roughness"}
        if unknown:
            raise ConfigError(f"unknown material keys: {sorted(unknown)}")
        if "albedo" not in d:
            raise ConfigError("material requires an albedo")
        return cls(albedo=d["albedo"],
                   metallic=float(d.get("metallic", 0.0)),
                   roughness=float(d.get("roughness", 0.5)))


@dataclass(frozen=True)
class AreaLight:
    """Axis-aligned rectangular emitter at `position`, facing -z.

    `size` is the (x, y) edge length pair; `radiance` is emitted per unit
    area per steradian toward the hemisphere below.
    """

    position: np.ndarray
    size: tuple[float, float]
    radiance: np.ndarray

    def __post_init__(self) -> None:
        pos = np.asarray(self.position, dtype=np.float64).reshape(-1)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ConfigError(f"light position must be a finite 3-vector, got {pos}")
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)
        size = (float(self.size[0]), float(self.size[1]))
        if size[0] <= 0.0 or size[1] <= 0.0:
            raise ConfigError(f"light size must be positive, got {size}")
        object.__setattr__(self, "size", size)
        rad = _as_rgb(self.radiance, "radiance")
        if np.any(rad < 0.0):
            raise ConfigError(f"radiance must be non-negative, got {rad}")
        object.__setattr__(self, "radiance", rad)

    def to_dict(self) -> dict:
        return {
            "position": [float(c) for c in self.position],
            "size": [float(c) for c in self.size],
            "radiance": [float(c) for c in self.radiance],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AreaLight":
        unknown = set(d) - {"position", "size", "radiance"}
        if unknown:
            raise ConfigError(f"unknown light keys: {sorted(unknown)}")
        try:
            return cls(position=d["position"], size=tuple(d["size"]),
                       radiance=d["radiance"])
        except KeyError as exc:
            raise ConfigError(f"light requires {exc.args[0]}") from None


@dataclass(frozen=True)
class BinBox:
    """Open-top box. Local frame: interior floor at z=0, rim at z=inner_size[2]."""

    inner_size: tuple[float, float, float]
    wall_thickness: float
    pose: Pose = field(default_factory=Pose.identity)
    material: Material = field(
        default_factory=lambda: Material(albedo=(0.45, 0.35, 0.25)))

    def __post_init__(self) -> None:
        size = tuple(float(c) for c in self.inner_size)
        if len(size) != 3 or any(c <= 0.0 for c in size):
            raise ConfigError(f"bin inner size must be 3 positive edges, got {size}")
        object.__setattr__(self, "inner_size", size)
        if self.wall_thickness <= 0.0:
            raise ConfigError(
                f"wall thickness must be positive, got {self.wall_thickness}")

    def to_dict(self) -> dict:
        return {
            "inner_size": list(self.inner_size),
            "wall_thickness": float(self.wall_thickness),
            "pose": self.pose.to_dict(),
            "material": self.material.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinBox":
        unknown = set(d) - {"inner_size", "wall_thickness", "pose", "material"}
        if unknown:
            raise ConfigError(f"unknown bin keys: {sorted(unknown)}")
        try:
            pose = Pose.from_dict(d["pose"]) if "pose" in d else Pose.identity()
            mat = (Material.from_dict(d["material"]) if "material" in d
                   else Material(albedo=(0.45, 0.35, 0.25)))
            return cls(inner_size=tuple(d["inner_size"]),
                       wall_thickness=float(d["wall_thickness"]),
                       pose=pose, material=mat)
        except KeyError as exc:
            raise ConfigError(f"bin requires {exc.args[0]}") from None


_BOX_TRIS = np.array([
    [0, 2, 1], [0, 3, 2],  # bottom (-z)
    [4, 5, 6], [4, 6, 7],  # top (+z)
    [0, 1, 5], [0, 5, 4],  # -y
    [2, 3, 7], [2, 7, 6],  # +y
    [0, 4, 7], [0, 7, 3],  # -x
    [1, 2, 6], [1, 6, 5],  # +x
], dtype=np.int32)


def _slab(x0, x1, y0, y1, z0, z1) -> np.ndarray:
    return np.array([
        [x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
        [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1],
    ], dtype=np.float64)


def bin_mesh(box: BinBox) -> TriMesh:
    """Closed floor slab plus four wall slabs, in the bin's local frame."""
    ix, iy, iz = box.inner_size
    t = box.wall_thickness
    hx, hy = ix / 2.0, iy / 2.0
    slabs = [
        _slab(-hx - t, hx + t, -hy - t, hy + t, -t, 0.0),       # floor
        _slab(-hx - t, -hx, -hy - t, hy + t, 0.0, iz),          # -x wall
        _slab(hx, hx + t, -hy - t, hy + t, 0.0, iz),            # +x wall
        _slab(-hx, hx, -hy - t, -hy, 0.0, iz),                  # -y wall
        _slab(-hx, hx, hy, hy + t, 0.0, iz),                    # +y wall
    ]
    vertices = np.concatenate(slabs)
    triangles = np.concatenate(
        [_BOX_TRIS + 8 * i for i in range(len(slabs))]).astype(np.int32)
    return TriMesh(vertices=vertices, triangles=triangles)


@dataclass(frozen=True)
class SceneInstance:
    """One placed object: mesh in local frame, world pose, id, label, material."""

    mesh: TriMesh
    pose: Pose
    instance_id: int
    class_label: str
    material: Material

    def __post_init__(self) -> None:
        if self.instance_id < 1:
            raise ConfigError(f"instance ids start at 1, got {self.instance_id}")


@dataclass(frozen=True)
class SceneDescription:
    """Everything the renderer consumes; hashable for reproducibility checks."""

    instances: tuple[SceneInstance, ...]
    bin: BinBox | None
    ambient_light: np.ndarray
    area_lights: tuple[AreaLight, ...]
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "instances", tuple(self.instances))
        object.__setattr__(self, "area_lights", tuple(self.area_lights))
        ambient = _as_rgb(self.ambient_light, "ambient_light")
        if np.any(ambient < 0.0):
            raise ConfigError(f"ambient radiance must be non-negative, got {ambient}")
        object.__setattr__(self, "ambient_light", ambient)
        if not isinstance(self.seed, (int, np.integer)):
            raise ConfigError("scene seed must be an integer")
        seed = int(self.seed)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 unsigned bits, got {seed}")
        object.__setattr__(self, "seed", seed)
        ids = [inst.instance_id for inst in self.instances]
        if ids != list(range(1, len(ids) + 1)):
            raise ConfigError(f"instance ids must be contiguous from 1, got {ids}")
        if self.bin is not None:
            inv = self.bin.pose.inverse()
            hx = self.bin.inner_size[0] / 2.0
            hy = self.bin.inner_size[1] / 2.0
            for inst in self.instances:
                local = inv.transform(inst.pose.translation[np.newaxis, :])[0]
                if abs(local[0]) > hx or abs(local[1]) > hy or local[2] < 0.0:
                    raise ConfigError(
                        f"instance {inst.instance_id} origin {local} lies outside "
                        f"the bin interior")

    @property
    def instance_count(self) -> int:
        return len(self.instances)


def scene_digest(scene: SceneDescription) -> str:
    """SHA-256 over a canonical byte serialization of the full scene."""
    h = hashlib.sha256()

    def put(tag: str, payload: bytes) -> None:
        h.update(tag.encode())
        h.update(struct.pack("<Q", len(payload)))
        h.update(payload)

    put("seed", struct.pack("<Q", scene.seed))
    put("ambient", np.ascontiguousarray(scene.ambient_light).tobytes())
    if scene.bin is not None:
        put("bin.size", struct.pack("<3d", *scene.bin.inner_size))
        put("bin.wall", struct.pack("<d", scene.bin.wall_thickness))
        put("bin.rot", np.ascontiguousarray(scene.bin.pose.rotation).tobytes())
        put("bin.tra", np.ascontiguousarray(scene.bin.pose.translation).tobytes())
        put("bin.mat", np.ascontiguousarray(scene.bin.material.albedo).tobytes()
            + struct.pack("<2d", scene.bin.material.metallic,
                          scene.bin.material.roughness))
    for light in scene.area_lights:
        put("light", np.ascontiguousarray(light.position).tobytes()
            + struct.pack("<2d", *light.size)
            + np.ascontiguousarray(light.radiance).tobytes())
    for inst in scene.instances:
        put("inst.id", struct.pack("<I", inst.instance_id))
        put("inst.label", inst.class_label.encode())
        put("inst.rot", np.ascontiguousarray(inst.pose.rotation).tobytes())
        put("inst.tra", np.ascontiguousarray(inst.pose.translation).tobytes())
        put("inst.mat", np.ascontiguousarray(inst.material.albedo).tobytes()
            + struct.pack("<2d", inst.material.metallic, inst.material.roughness))
        put("inst.verts", np.ascontiguousarray(inst.mesh.vertices).tobytes())
        put("inst.tris", np.ascontiguousarray(inst.mesh.triangles).tobytes())
    return h.hexdigest()


def require_geometry(scene: SceneDescription) -> None:
    if scene.bin is None and not scene.instances:
        raise EmptyScene("scene contains no geometry")
