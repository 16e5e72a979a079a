"""Shared builders and independent oracles for the test suite.

The oracles here are written from scratch against the public contracts
(plain numpy, no BVH, no jit kernels) so the implementation and its checks
cannot share a bug.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from slsim import (
    Material,
    PinholeModel,
    Pose,
    SceneDescription,
    SceneInstance,
    box_mesh,
)

# Device axes in world coordinates for a straight-down view in a +z-up world:
# device x = world x, device y = world -y, device z (view) = world -z.
DOWN = np.array([
    [1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, -1.0],
])


def down_camera(fx: float, width: int, height: int, position,
                fy: float | None = None,
                cx: float | None = None, cy: float | None = None) -> PinholeModel:
    return PinholeModel.looking_from(
        fx, fx if fy is None else fy,
        (width - 1) / 2.0 if cx is None else cx,
        (height - 1) / 2.0 if cy is None else cy,
        width, height, position, DOWN)


def forward_camera(fx: float, width: int, height: int, position=(0.0, 0.0, 0.0),
                   fy: float | None = None,
                   cx: float | None = None, cy: float | None = None) -> PinholeModel:
    return PinholeModel.looking_from(
        fx, fx if fy is None else fy,
        (width - 1) / 2.0 if cx is None else cx,
        (height - 1) / 2.0 if cy is None else cy,
        width, height, position, np.eye(3))


def slab(instance_id: int, size, center, albedo=(0.6, 0.6, 0.6),
         label: str = "slab", rotation=None) -> SceneInstance:
    return SceneInstance(
        mesh=box_mesh(size),
        pose=Pose(np.eye(3) if rotation is None else rotation, center),
        instance_id=instance_id,
        class_label=label,
        material=Material(albedo=albedo))


def simple_scene(instances, seed: int = 7, ambient=(0.0, 0.0, 0.0),
                 area_lights=()) -> SceneDescription:
    return SceneDescription(instances=list(instances), bin=None,
                            ambient_light=ambient,
                            area_lights=list(area_lights), seed=seed)


def scene_triangles(scene: SceneDescription):
    """World-space triangle vertex arrays (v0, v1, v2), bin first."""
    from slsim.scene import bin_mesh

    chunks = []
    if scene.bin is not None:
        mesh = bin_mesh(scene.bin)
        chunks.append(mesh.transformed_vertices(scene.bin.pose)[mesh.triangles])
    for inst in scene.instances:
        chunks.append(
            inst.mesh.transformed_vertices(inst.pose)[inst.mesh.triangles])
    tris = np.concatenate(chunks, axis=0)
    return tris[:, 0], tris[:, 1], tris[:, 2]


def ray_scan(origins: np.ndarray, dirs: np.ndarray,
             v0: np.ndarray, v1: np.ndarray, v2: np.ndarray,
             t_min: float = 1e-6):
    """Brute-force nearest hit over every triangle, two-sided.

    Ties at identical t go to the lowest triangle index. Returns
    (t, triangle index) with t = inf, index = -1 on miss.
    """
    o = origins[:, None, :]
    d = dirs[:, None, :]
    e1 = (v1 - v0)[None, :, :]
    e2 = (v2 - v0)[None, :, :]
    pvec = np.cross(d, e2)
    det = np.sum(e1 * pvec, axis=2)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = o - v0[None, :, :]
    u = np.sum(tvec * pvec, axis=2) * inv
    qvec = np.cross(tvec, e1)
    v = np.sum(d * qvec, axis=2) * inv
    t = np.sum(e2 * qvec, axis=2) * inv
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > t_min)
    t = np.where(hit, t, np.inf)
    idx = np.argmin(t, axis=1)
    best = t[np.arange(t.shape[0]), idx]
    idx = np.where(np.isfinite(best), idx, -1)
    return best, idx


def segment_occluded(points: np.ndarray, target: np.ndarray,
                     v0: np.ndarray, v1: np.ndarray, v2: np.ndarray,
                     eps: float = 1e-6) -> np.ndarray:
    """True where the open segment point -> target crosses any triangle."""
    dirs = target[None, :] - points
    o = points[:, None, :]
    d = dirs[:, None, :]
    e1 = (v1 - v0)[None, :, :]
    e2 = (v2 - v0)[None, :, :]
    pvec = np.cross(d, e2)
    det = np.sum(e1 * pvec, axis=2)
    ok = np.abs(det) > 1e-14
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = o - v0[None, :, :]
    u = np.sum(tvec * pvec, axis=2) * inv
    qvec = np.cross(tvec, e1)
    v = np.sum(d * qvec, axis=2) * inv
    t = np.sum(e2 * qvec, axis=2) * inv
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0)
    hit &= (t > eps) & (t < 1.0 - eps)
    return hit.any(axis=1)


def pixel_rays(camera: PinholeModel):
    """World-space rays through every pixel center, row-major order."""
    xs, ys = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    d_dev = np.stack([
        (xs.ravel() - camera.cx) / camera.fx,
        (ys.ravel() - camera.cy) / camera.fy,
        np.ones(xs.size),
    ], axis=1)
    d_world = d_dev @ camera.rotation  # R^T d, row convention
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.center, d_world.shape).copy()
    return origins, d_world


def dir_digest(root) -> str:
    """SHA-256 over every file's relative path and bytes, sorted."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode())
        h.update(b"\0")
        h.update(path.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def box_penetration_depth(pose_a: Pose, pose_b: Pose, half) -> float:
    """Separating-axis penetration depth for two equally sized oriented boxes.

    Negative or zero means separated (the value is the largest axis gap);
    positive is the smallest translation that would separate the boxes.
    """
    half = np.asarray(half, dtype=np.float64)
    # Poses map local to world, so box axes are the pose rotation columns.
    ra = pose_a.rotation
    rb = pose_b.rotation
    dist = pose_b.translation - pose_a.translation
    axes = [ra[:, i] for i in range(3)] + [rb[:, i] for i in range(3)]
    for i in range(3):
        for j in range(3):
            cross = np.cross(ra[:, i], rb[:, j])
            n = np.linalg.norm(cross)
            if n > 1e-9:
                axes.append(cross / n)
    depth = np.inf
    for axis in axes:
        r_a = np.sum(half * np.abs(axis @ ra))
        r_b = np.sum(half * np.abs(axis @ rb))
        overlap = r_a + r_b - abs(axis @ dist)
        depth = min(depth, overlap)
        if overlap <= 0.0:
            break
    return float(depth)


def boxes_interpenetrate(pose_a: Pose, pose_b: Pose, half, tol: float = 1e-6) -> bool:
    """True only for overlap deeper than tol; touching contact is separated."""
    return box_penetration_depth(pose_a, pose_b, half) > tol
