"""Path-traced rendering: RGB, ground-truth depth/instance maps, pattern frames.

Images parallelize over row bands on Python threads; the kernels release the
GIL and every sample's randomness is a pure function of
(seed, frame, x, y, sample), so output is bit-identical for any worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .bvh import BVH, build_bvh
from .errors import ConfigError, RasterMismatch, ResolutionMismatch
from .geometry import PinholeModel
from .graycode import PatternStack
from .imageio import luminance
from .scene import SceneDescription, bin_mesh, require_geometry

_DUMMY_ROT = np.eye(3)
_DUMMY_VEC = np.zeros(3)
_DUMMY_PATTERN = np.zeros((1, 1))


@dataclass(frozen=True)
class RenderSettings:
    """Sampling knobs; `resolution`, when set, must match the camera raster."""

    samples_per_pixel: int = 20
    max_bounces: int = 3
    resolution: tuple[int, int] | None = None

    def __post_init__(self) -> None:
        if self.samples_per_pixel < 1:
            raise ConfigError(
                f"samples_per_pixel must be >= 1, got {self.samples_per_pixel}")
        if self.max_bounces < 0:
            raise ConfigError(
                f"max_bounces must be >= 0, got {self.max_bounces}")
        if self.resolution is not None:
            res = (int(self.resolution[0]), int(self.resolution[1]))
            if res[0] < 1 or res[1] < 1:
                raise ConfigError(f"resolution must be positive, got {res}")
            object.__setattr__(self, "resolution", res)

    def check_camera(self, camera: PinholeModel) -> None:
        if self.resolution is None:
            return
        if self.resolution != (camera.width, camera.height):
            raise ResolutionMismatch(
                f"settings resolution {self.resolution} does not match camera "
                f"raster {(camera.width, camera.height)}")


@dataclass(frozen=True)
class GroundTruthFrames:
    """Per-pixel ground truth; rgb is filled in by the rendering pipeline."""

    depth_gt: np.ndarray        # (H, W) float64 meters, 0 = no hit
    instance_map: np.ndarray    # (H, W) uint16, 0 = background or bin
    rgb: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.depth_gt.shape != self.instance_map.shape:
            raise ResolutionMismatch(
                f"depth {self.depth_gt.shape} vs instance map "
                f"{self.instance_map.shape}")
        if np.any(self.depth_gt < 0.0):
            raise ConfigError("ground-truth depth must be non-negative")
        if np.any((self.instance_map > 0) & (self.depth_gt == 0.0)):
            raise ConfigError("instance ids present on pixels with no hit")


@dataclass(frozen=True)
class TracerScene:
    """Scene flattened to world-space arrays plus the acceleration structure."""

    v0: np.ndarray          # (T, 3) first vertex per triangle
    e1: np.ndarray          # (T, 3) second edge vector
    e2: np.ndarray          # (T, 3) third edge vector
    tri_mat: np.ndarray     # (T,) int64 index into the material table
    tri_inst: np.ndarray    # (T,) int32 instance id (0 = bin)
    mat_albedo: np.ndarray  # (M, 3)
    mat_metallic: np.ndarray
    mat_roughness: np.ndarray
    ambient: np.ndarray     # (3,)
    light_pos: np.ndarray   # (L, 3)
    light_size: np.ndarray  # (L, 2)
    light_rad: np.ndarray   # (L, 3)
    bvh: BVH

    @property
    def triangle_count(self) -> int:
        return self.v0.shape[0]


def build_tracer(scene: SceneDescription) -> TracerScene:
    """Flatten poses, meshes, and materials into kernel-ready arrays.

    Triangles are laid out bin-first then instances in id order, which fixes
    the global ids used for equal-distance hit tie-breaking.
    """
    require_geometry(scene)
    items = []
    if scene.bin is not None:
        mesh = bin_mesh(scene.bin)
        items.append((mesh.transformed_vertices(scene.bin.pose),
                      mesh.triangles, scene.bin.material, 0))
    for inst in scene.instances:
        items.append((inst.mesh.transformed_vertices(inst.pose),
                      inst.mesh.triangles, inst.material, inst.instance_id))

    v0_parts, e1_parts, e2_parts, mat_parts, inst_parts = [], [], [], [], []
    albedo, metallic, roughness = [], [], []
    for mat_index, (verts, tris, mat, inst_id) in enumerate(items):
        a = verts[tris[:, 0]]
        b = verts[tris[:, 1]]
        c = verts[tris[:, 2]]
        v0_parts.append(a)
        e1_parts.append(b - a)
        e2_parts.append(c - a)
        mat_parts.append(np.full(len(tris), mat_index, dtype=np.int64))
        inst_parts.append(np.full(len(tris), inst_id, dtype=np.int32))
        albedo.append(mat.albedo)
        metallic.append(mat.metallic)
        roughness.append(mat.roughness)

    v0 = np.ascontiguousarray(np.concatenate(v0_parts))
    e1 = np.ascontiguousarray(np.concatenate(e1_parts))
    e2 = np.ascontiguousarray(np.concatenate(e2_parts))
    lights = scene.area_lights
    return TracerScene(
        v0=v0, e1=e1, e2=e2,
        tri_mat=np.concatenate(mat_parts),
        tri_inst=np.concatenate(inst_parts),
        mat_albedo=np.ascontiguousarray(albedo, dtype=np.float64),
        mat_metallic=np.asarray(metallic, dtype=np.float64),
        mat_roughness=np.asarray(roughness, dtype=np.float64),
        ambient=np.ascontiguousarray(scene.ambient_light),
        light_pos=np.ascontiguousarray(
            [l.position for l in lights], dtype=np.float64).reshape(len(lights), 3),
        light_size=np.ascontiguousarray(
            [l.size for l in lights], dtype=np.float64).reshape(len(lights), 2),
        light_rad=np.ascontiguousarray(
            [l.radiance for l in lights], dtype=np.float64).reshape(len(lights), 3),
        bvh=build_bvh(v0, v0 + e1, v0 + e2),
    )


def _worker_count(workers: int | None) -> int:
    if workers is not None:
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}")
        return workers
    return os.cpu_count() or 1


def _bands(height: int, workers: int) -> list[tuple[int, int]]:
    rows = max(1, math.ceil(height / max(1, workers * 4)))
    return [(y, min(y + rows, height)) for y in range(0, height, rows)]


def _run_banded(fn, height: int, workers: int) -> None:
    bands = _bands(height, workers)
    if workers == 1 or len(bands) == 1:
        for y0, y1 in bands:
            fn(y0, y1)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, y0, y1) for y0, y1 in bands]
        for fut in futures:
            fut.result()


def _camera_arrays(camera: PinholeModel):
    rot = np.ascontiguousarray(camera.rotation)
    rot_t = np.ascontiguousarray(rot.T)
    t = np.ascontiguousarray(camera.translation)
    center = np.ascontiguousarray(camera.center)
    return rot, rot_t, t, center


def render_ground_truth(scene: SceneDescription, camera: PinholeModel,
                        workers: int | None = None,
                        tracer: TracerScene | None = None) -> GroundTruthFrames:
    """Exact first-hit Z-depth and instance ids through pixel centers."""
    tracer = tracer if tracer is not None else build_tracer(scene)
    rot, rot_t, t, center = _camera_arrays(camera)
    h, w = camera.height, camera.width
    depth = np.zeros((h, w), dtype=np.float64)
    inst = np.zeros((h, w), dtype=np.int32)
    b = tracer.bvh

    def band(y0: int, y1: int) -> None:
        _kernels.k_ground_truth(
            y0, y1, w, camera.fx, camera.fy, camera.cx, camera.cy,
            rot, rot_t, t, center,
            b.node_min, b.node_max, b.node_left, b.node_first, b.node_count,
            b.order, tracer.v0, tracer.e1, tracer.e2, tracer.tri_inst,
            depth, inst)

    _run_banded(band, h, _worker_count(workers))
    return GroundTruthFrames(depth_gt=depth, instance_map=inst.astype(np.uint16))


def _render_linear(tracer: TracerScene, camera: PinholeModel, spp: int,
                   max_bounces: int, seed: int, frame: int,
                   pattern: np.ndarray | None = None,
                   projector: PinholeModel | None = None,
                   power: float = 0.0,
                   workers: int | None = None) -> np.ndarray:
    rot, rot_t, _, center = _camera_arrays(camera)
    h, w = camera.height, camera.width
    out = np.zeros((h, w, 3), dtype=np.float64)
    b = tracer.bvh

    if projector is not None and pattern is not None:
        has_proj = 1
        p_rot = np.ascontiguousarray(projector.rotation)
        p_t = np.ascontiguousarray(projector.translation)
        p_center = np.ascontiguousarray(projector.center)
        pfx, pfy = projector.fx, projector.fy
        pcx, pcy = projector.cx, projector.cy
        pat = np.ascontiguousarray(pattern, dtype=np.float64)
    else:
        has_proj = 0
        p_rot, p_t, p_center = _DUMMY_ROT, _DUMMY_VEC, _DUMMY_VEC
        pfx = pfy = 1.0
        pcx = pcy = 0.0
        pat = _DUMMY_PATTERN

    def band(y0: int, y1: int) -> None:
        _kernels.k_render(
            y0, y1, w, out,
            camera.fx, camera.fy, camera.cx, camera.cy, rot, rot_t, center,
            b.node_min, b.node_max, b.node_left, b.node_first, b.node_count,
            b.order, tracer.v0, tracer.e1, tracer.e2, tracer.tri_mat,
            tracer.mat_albedo, tracer.mat_metallic, tracer.mat_roughness,
            tracer.ambient, tracer.light_pos, tracer.light_size,
            tracer.light_rad,
            has_proj, float(pfx), float(pfy), float(pcx), float(pcy),
            p_rot, p_t, p_center, pat, float(power),
            spp, max_bounces, np.uint64(seed), np.uint64(frame))

    _run_banded(band, h, _worker_count(workers))
    return out


def render_rgb(scene: SceneDescription, camera: PinholeModel,
               settings: RenderSettings,
               workers: int | None = None,
               tracer: TracerScene | None = None) -> np.ndarray:
    """Path-traced linear RGB under ambient and area lights (frame index 0)."""
    settings.check_camera(camera)
    tracer = tracer if tracer is not None else build_tracer(scene)
    return _render_linear(tracer, camera, settings.samples_per_pixel,
                          settings.max_bounces, scene.seed, 0,
                          workers=workers)


def _bilinear_lookup(pattern: np.ndarray, u: float, v: float) -> float:
    """Python twin of the kernel's clamped bilinear pattern fetch."""
    ph, pw = pattern.shape
    if u < -0.5 or u > pw - 0.5 or v < -0.5 or v > ph - 0.5:
        return -1.0
    x0 = math.floor(u)
    y0 = math.floor(v)
    fx = u - x0
    fy = v - y0
    x0c = min(max(int(x0), 0), pw - 1)
    x1c = min(max(int(x0) + 1, 0), pw - 1)
    y0c = min(max(int(y0), 0), ph - 1)
    y1c = min(max(int(y0) + 1, 0), ph - 1)
    a = pattern[y0c, x0c] * (1.0 - fx) + pattern[y0c, x1c] * fx
    b = pattern[y1c, x0c] * (1.0 - fx) + pattern[y1c, x1c] * fx
    return a * (1.0 - fy) + b * fy


def projector_radiance(point, normal, projector: PinholeModel,
                       pattern: np.ndarray, power: float,
                       tracer: TracerScene | None = None) -> np.ndarray:
    """Reflected radiance a Lambertian-unit surface would receive, as RGB.

    Zero when the point falls outside the projector raster, faces away, is
    unlit by the pattern, or (when a tracer is supplied) the shadow ray to
    the projector center is blocked.
    """
    point = np.asarray(point, dtype=np.float64).reshape(3)
    normal = np.asarray(normal, dtype=np.float64).reshape(3)
    pattern = np.asarray(pattern, dtype=np.float64)
    if pattern.shape != (projector.height, projector.width):
        raise RasterMismatch(
            f"pattern {pattern.shape} does not match projector raster "
            f"{(projector.height, projector.width)}")
    dev = projector.rotation @ point + projector.translation
    if dev[2] <= 1e-12:
        return np.zeros(3)
    u = projector.fx * dev[0] / dev[2] + projector.cx
    v = projector.fy * dev[1] / dev[2] + projector.cy
    pat = _bilinear_lookup(pattern, u, v)
    if pat <= 0.0:
        return np.zeros(3)
    to_proj = projector.center - point
    d2 = float(to_proj @ to_proj)
    dist = math.sqrt(d2)
    wi = to_proj / dist
    cos_s = float(normal @ wi)
    if cos_s <= 0.0:
        return np.zeros(3)
    if tracer is not None:
        b = tracer.bvh
        origin = point + normal * _kernels.ORIGIN_NUDGE
        stack = np.empty(64, dtype=np.int64)
        if _kernels.bvh_occluded(origin[0], origin[1], origin[2],
                                 wi[0], wi[1], wi[2], dist - _kernels.T_EPS,
                                 b.node_min, b.node_max, b.node_left,
                                 b.node_first, b.node_count, b.order,
                                 tracer.v0, tracer.e1, tracer.e2, stack):
            return np.zeros(3)
    e = power * pat * cos_s / (4.0 * math.pi * d2)
    return np.full(3, e)


def render_pattern_frames(scene: SceneDescription, camera: PinholeModel,
                          projector: PinholeModel, stack: PatternStack,
                          settings: RenderSettings, power: float,
                          workers: int | None = None,
                          tracer: TracerScene | None = None) -> list[np.ndarray]:
    """One linear luminance image per pattern frame, in stack order."""
    settings.check_camera(camera)
    if (stack.width, stack.height) != (projector.width, projector.height):
        raise RasterMismatch(
            f"pattern stack raster {(stack.width, stack.height)} does not "
            f"match projector raster {(projector.width, projector.height)}")
    tracer = tracer if tracer is not None else build_tracer(scene)
    frames = []
    for i in range(stack.frame_count):
        rgb = _render_linear(tracer, camera, settings.samples_per_pixel,
                             settings.max_bounces, scene.seed, i,
                             pattern=stack.frames[i], projector=projector,
                             power=power, workers=workers)
        frames.append(luminance(rgb))
    return frames
