"""Versioned JSON pipeline configuration.

Unknown keys are errors at every level so a typo cannot silently change an
experiment. Seeds are never invented: the value comes from a flag or the
config file, otherwise resolution fails.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoFailure
from .geometry import PinholeModel, TriMesh, load_rig
from .graycode import GrayCodeConfig
from .meshio import box_mesh, load_mesh
from .render import RenderSettings
from .scene import AreaLight, Material
from .scenegen import ClutterConfig

CONFIG_VERSION = 1

_TOP_KEYS = {"version", "dataset_name", "scene", "rig", "pattern", "render",
             "reconstruct", "output_dir", "scene_count", "seed"}
_SCENE_KEYS = {"mesh", "count", "bin_inner_size", "voxel_edge", "drop_height",
               "orientation_mode", "class_label", "material", "bin_material",
               "wall_thickness", "ambient_light", "area_lights", "poses"}
_PATTERN_KEYS = {"column_count", "bit_count", "raster_height"}
_RENDER_KEYS = {"samples_per_pixel", "max_bounces", "resolution",
                "projector_power"}
_RECON_KEYS = {"min_contrast"}


def _check_keys(section: dict, allowed: set, where: str) -> None:
    if not isinstance(section, dict):
        raise ConfigError(f"{where} must be a JSON object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _load_mesh_spec(spec, base_dir: Path) -> TriMesh:
    if isinstance(spec, str):
        return load_mesh(base_dir / spec)
    if isinstance(spec, dict):
        _check_keys(spec, {"primitive", "size"}, "mesh")
        if spec.get("primitive") != "box":
            raise ConfigError(
                f"unsupported mesh primitive {spec.get('primitive')!r}")
        size = spec.get("size")
        if size is None:
            raise ConfigError("box primitive requires a size")
        return box_mesh(size)
    raise ConfigError(f"mesh must be a path or a primitive spec, got {spec!r}")


@dataclass(frozen=True)
class PipelineConfig:
    """Fully resolved configuration for the end-to-end pipeline."""

    dataset_name: str
    mesh: TriMesh
    count: int
    bin_inner_size: tuple[float, float, float]
    voxel_edge: float | None
    drop_height: tuple[float, float]
    orientation_mode: str
    class_label: str
    materials: tuple[Material, ...]
    bin_material: Material | None
    wall_thickness: float
    ambient_light: tuple[float, float, float]
    area_lights: tuple[AreaLight, ...]
    poses_path: Path | None
    camera: PinholeModel
    projector: PinholeModel
    pattern: GrayCodeConfig
    pattern_raster_height: int
    render: RenderSettings
    projector_power: float
    min_contrast: float
    output_dir: Path | None
    scene_count: int
    seed: int | None

    def __post_init__(self) -> None:
        if self.projector.width != self.pattern.column_count:
            raise ConfigError(
                f"projector raster width {self.projector.width} does not "
                f"match pattern column_count {self.pattern.column_count}")

    def clutter_config(self, scene_seed: int) -> ClutterConfig:
        return ClutterConfig(
            mesh=self.mesh, count=self.count,
            bin_inner_size=self.bin_inner_size, seed=scene_seed,
            voxel_edge=self.voxel_edge, drop_height=self.drop_height,
            orientation_mode=self.orientation_mode)

    def resolve_seed(self, override: int | None) -> int:
        """Flag beats config; no implicit fallback."""
        if override is not None:
            return int(override)
        if self.seed is not None:
            return int(self.seed)
        raise ConfigError("no seed given: pass --seed or set 'seed' in the config")

    def rig_dict(self) -> dict:
        return {"camera": self.camera.to_dict(),
                "projector": self.projector.to_dict()}

    def pattern_dict(self) -> dict:
        return {"column_count": self.pattern.column_count,
                "bit_count": self.pattern.bit_count,
                "raster_height": self.pattern_raster_height}

    def render_dict(self) -> dict:
        return {"samples_per_pixel": self.render.samples_per_pixel,
                "max_bounces": self.render.max_bounces,
                "projector_power": self.projector_power,
                "min_contrast": self.min_contrast,
                "ambient_light": list(self.ambient_light)}


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    """Parse and validate a pipeline config; paths resolve against the file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    _check_keys(raw, _TOP_KEYS, "config")
    version = raw.get("version")
    if version != CONFIG_VERSION:
        raise ConfigError(
            f"config version must be {CONFIG_VERSION}, got {version!r}")
    base_dir = path.parent

    for required in ("scene", "rig", "pattern"):
        if required not in raw:
            raise ConfigError(f"config requires a '{required}' section")

    scene = raw["scene"]
    _check_keys(scene, _SCENE_KEYS, "scene")
    if "mesh" not in scene or "count" not in scene or "bin_inner_size" not in scene:
        raise ConfigError("scene requires mesh, count, and bin_inner_size")
    mesh = _load_mesh_spec(scene["mesh"], base_dir)

    material_spec = scene.get("material", {"albedo": [0.6, 0.6, 0.6]})
    if isinstance(material_spec, list):
        materials = tuple(Material.from_dict(m) for m in material_spec)
        if not materials:
            raise ConfigError("material list must not be empty")
    else:
        materials = (Material.from_dict(material_spec),)
    bin_material = (Material.from_dict(scene["bin_material"])
                    if "bin_material" in scene else None)
    ambient = scene.get("ambient_light", [0.05, 0.05, 0.05])
    ambient = tuple(float(c) for c in np.asarray(ambient, dtype=np.float64))
    if len(ambient) != 3:
        raise ConfigError(f"ambient_light must be RGB, got {ambient}")
    area_lights = tuple(AreaLight.from_dict(l)
                        for l in scene.get("area_lights", []))
    poses_path = (base_dir / scene["poses"]) if "poses" in scene else None

    rig = raw["rig"]
    if isinstance(rig, str):
        camera, projector = load_rig(base_dir / rig)
    else:
        _check_keys(rig, {"camera", "projector"}, "rig")
        try:
            camera = PinholeModel.from_dict(rig["camera"])
            projector = PinholeModel.from_dict(rig["projector"])
        except KeyError as exc:
            raise ConfigError(f"rig requires {exc.args[0]}") from None

    pattern = raw["pattern"]
    _check_keys(pattern, _PATTERN_KEYS, "pattern")
    if "column_count" not in pattern:
        raise ConfigError("pattern requires column_count")
    gc_kwargs = {"column_count": int(pattern["column_count"])}
    if "bit_count" in pattern:
        gc_kwargs["bit_count"] = int(pattern["bit_count"])
    gray = GrayCodeConfig(**gc_kwargs)
    raster_height = int(pattern.get("raster_height", projector.height))
    if raster_height != projector.height:
        raise ConfigError(
            f"pattern raster_height {raster_height} does not match projector "
            f"raster height {projector.height}")

    render = raw.get("render", {})
    _check_keys(render, _RENDER_KEYS, "render")
    resolution = render.get("resolution")
    settings = RenderSettings(
        samples_per_pixel=int(render.get("samples_per_pixel", 20)),
        max_bounces=int(render.get("max_bounces", 3)),
        resolution=tuple(int(c) for c in resolution) if resolution else None)
    power = float(render.get("projector_power", 30.0))
    if power < 0.0:
        raise ConfigError(f"projector_power must be non-negative, got {power}")

    recon = raw.get("reconstruct", {})
    _check_keys(recon, _RECON_KEYS, "reconstruct")
    min_contrast = float(recon.get("min_contrast", 0.02))
    if not 0.0 < min_contrast < 1.0:
        raise ConfigError(f"min_contrast must lie in (0, 1), got {min_contrast}")

    scene_count = int(raw.get("scene_count", 1))
    if scene_count < 1:
        raise ConfigError(f"scene_count must be >= 1, got {scene_count}")

    seed = raw.get("seed")
    if seed is not None:
        seed = int(seed)

    output_dir = raw.get("output_dir")

    drop = scene.get("drop_height", (0.0, 0.5))
    return PipelineConfig(
        dataset_name=str(raw.get("dataset_name", "slsim-dataset")),
        mesh=mesh,
        count=int(scene["count"]),
        bin_inner_size=tuple(float(c) for c in scene["bin_inner_size"]),
        voxel_edge=(float(scene["voxel_edge"])
                    if scene.get("voxel_edge") is not None else None),
        drop_height=(float(drop[0]), float(drop[1])),
        orientation_mode=str(scene.get("orientation_mode", "so3")),
        class_label=str(scene.get("class_label", "object")),
        materials=materials,
        bin_material=bin_material,
        wall_thickness=float(scene.get("wall_thickness", 0.02)),
        ambient_light=ambient,
        area_lights=area_lights,
        poses_path=poses_path,
        camera=camera,
        projector=projector,
        pattern=gray,
        pattern_raster_height=raster_height,
        render=settings,
        projector_power=power,
        min_contrast=min_contrast,
        output_dir=(base_dir / output_dir) if output_dir else None,
        scene_count=scene_count,
        seed=seed,
    )
