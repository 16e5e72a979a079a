"""Depth reconstruction from rendered pattern frames.

Pipeline: temporal binarization -> gray-code column decode -> per-pixel
triangulation of the camera ray against the projector column plane. Column
indices are used at integer precision; the resulting quantization is a real
noise source of gray-code sensors, not an artifact to be smoothed away.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (ConfigError, DegenerateGeometry, LayoutMismatch,
                     ResolutionMismatch)
from .geometry import PinholeModel, ProjectionMatrix, build_projection_matrix
from .graycode import GrayCodeConfig, gray_decode_array
from .imageio import load_png16, save_png16

MIN_CONTRAST = 0.02
COND_LIMIT = 1e12
INVALID_COLUMN_PNG = 65535  # sentinel used by the 16-bit debug export


@dataclass(frozen=True)
class BitObservation:
    """Per-pixel temporal statistics and thresholded bit planes."""

    temporal_max: np.ndarray  # (H, W) luminance
    temporal_min: np.ndarray  # (H, W)
    bits: np.ndarray          # (B, H, W) uint8 in {0, 1}, MSB plane first
    valid: np.ndarray         # (H, W) bool, False where contrast is too low

    def __post_init__(self) -> None:
        if np.any(self.temporal_min > self.temporal_max):
            raise ConfigError("temporal min exceeds max")

    @property
    def contrast(self) -> np.ndarray:
        return self.temporal_max - self.temporal_min


@dataclass(frozen=True)
class CorrespondenceMap:
    """Decoded projector column per camera pixel; -1 where invalid."""

    columns: np.ndarray  # (H, W) int32
    valid: np.ndarray    # (H, W) bool
    column_count: int

    def __post_init__(self) -> None:
        if self.columns.shape != self.valid.shape:
            raise ResolutionMismatch(
                f"columns {self.columns.shape} vs mask {self.valid.shape}")
        good = self.columns[self.valid]
        if good.size and (good.min() < 0 or good.max() >= self.column_count):
            raise ConfigError("valid columns outside [0, column_count)")
        if np.any(self.columns[~self.valid] != -1):
            raise ConfigError("invalid pixels must carry the -1 sentinel")


@dataclass(frozen=True)
class DepthFrame:
    """Z-depth in meters; 0 encodes invalid (shadow, decode failure)."""

    depth: np.ndarray  # (H, W) float64

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.depth)):
            raise ConfigError("depth must be finite")
        if np.any(self.depth < 0.0):
            raise ConfigError("depth must be non-negative")

    @property
    def valid_mask(self) -> np.ndarray:
        return self.depth > 0.0


def binarize(frames, min_contrast: float = MIN_CONTRAST) -> BitObservation:
    """Threshold bit planes against per-pixel temporal (max, min).

    A plane bit is 1 iff (I - min)/(max - min) > 0.5. Pixels whose contrast
    stays below `min_contrast` never saw the projector (shadow or out of
    frustum) and are marked invalid.
    """
    stack = np.asarray(frames, dtype=np.float64)
    if stack.ndim != 3:
        raise LayoutMismatch(f"expected (frames, h, w), got {stack.shape}")
    if stack.shape[0] < 3:
        raise LayoutMismatch(
            f"need white, black, and at least one bit plane; got {stack.shape[0]}")
    tmax = stack.max(axis=0)
    tmin = stack.min(axis=0)
    contrast = tmax - tmin
    valid = contrast >= min_contrast
    denom = np.where(contrast > 0.0, contrast, 1.0)
    normalized = (stack[2:] - tmin[np.newaxis]) / denom[np.newaxis]
    bits = (normalized > 0.5).astype(np.uint8)
    return BitObservation(temporal_max=tmax, temporal_min=tmin, bits=bits,
                          valid=valid)


def decode_correspondence(obs: BitObservation,
                          config: GrayCodeConfig) -> CorrespondenceMap:
    """Gray-decode the bit planes into projector columns.

    Decoded values at or beyond column_count are physically impossible and
    are marked invalid along with low-contrast observations.
    """
    if obs.bits.shape[0] != config.bit_count:
        raise LayoutMismatch(
            f"{obs.bits.shape[0]} bit planes for a {config.bit_count}-bit code")
    codes = np.zeros(obs.bits.shape[1:], dtype=np.uint32)
    for plane in obs.bits:
        codes = (codes << np.uint32(1)) | plane
    columns = gray_decode_array(codes).astype(np.int32)
    valid = obs.valid & (columns < config.column_count)
    columns = np.where(valid, columns, np.int32(-1))
    return CorrespondenceMap(columns=columns, valid=valid,
                             column_count=config.column_count)


def _as_matrix(m) -> np.ndarray:
    if isinstance(m, ProjectionMatrix):
        return m.m
    return np.asarray(m, dtype=np.float64)


def _system_rows(u_c, v_c, u_p, mc: np.ndarray, mp: np.ndarray):
    """Two camera-ray rows and one projector column-plane row of A x = b."""
    a0 = u_c * mc[2, :3] - mc[0, :3]
    a1 = v_c * mc[2, :3] - mc[1, :3]
    a2 = u_p * mp[2, :3] - mp[0, :3]
    b0 = mc[0, 3] - u_c * mc[2, 3]
    b1 = mc[1, 3] - v_c * mc[2, 3]
    b2 = mp[0, 3] - u_p * mp[2, 3]
    return a0, a1, a2, b0, b1, b2


def triangulate(u_c: float, v_c: float, u_p: float, camera_matrix,
                projector_matrix) -> np.ndarray:
    """Intersect the camera pixel ray with the projector column plane.

    Solves the 3x3 linear system directly (LAPACK partial pivoting) instead
    of evaluating a closed-form inverse; raises DegenerateGeometry when the
    system is ill-conditioned (ray parallel to the column plane).
    """
    mc = _as_matrix(camera_matrix)
    mp = _as_matrix(projector_matrix)
    a0, a1, a2, b0, b1, b2 = _system_rows(float(u_c), float(v_c), float(u_p),
                                          mc, mp)
    a = np.stack([a0, a1, a2])
    b = np.array([b0, b1, b2])
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise DegenerateGeometry(
            f"triangulation system condition number {cond:.3e} exceeds "
            f"{COND_LIMIT:.0e}")
    return np.linalg.solve(a, b)


def _triangulate_grid(cmap: CorrespondenceMap, camera: PinholeModel,
                      projector: PinholeModel) -> np.ndarray:
    """Vectorized triangulation of all valid pixels; returns Z-depth map."""
    mc = build_projection_matrix(camera).m
    mp = build_projection_matrix(projector).m
    h, w = cmap.columns.shape
    vv, uu = np.nonzero(cmap.valid)
    depth = np.zeros((h, w), dtype=np.float64)
    if uu.size == 0:
        return depth
    u_c = uu.astype(np.float64)
    v_c = vv.astype(np.float64)
    u_p = cmap.columns[vv, uu].astype(np.float64)

    n = uu.size
    a = np.empty((n, 3, 3))
    b = np.empty((n, 3))
    a[:, 0, :] = u_c[:, np.newaxis] * mc[2, :3] - mc[0, :3]
    a[:, 1, :] = v_c[:, np.newaxis] * mc[2, :3] - mc[1, :3]
    a[:, 2, :] = u_p[:, np.newaxis] * mp[2, :3] - mp[0, :3]
    b[:, 0] = mc[0, 3] - u_c * mc[2, 3]
    b[:, 1] = mc[1, 3] - v_c * mc[2, 3]
    b[:, 2] = mp[0, 3] - u_p * mp[2, 3]

    cond = np.linalg.cond(a)
    good = np.isfinite(cond) & (cond <= COND_LIMIT)
    points = np.full((n, 3), np.nan)
    if np.any(good):
        points[good] = np.linalg.solve(a[good], b[good][..., np.newaxis])[..., 0]

    z = points @ camera.rotation[2] + camera.translation[2]
    z = np.where(np.isfinite(z) & (z > 0.0), z, 0.0)
    depth[vv, uu] = z
    return depth


def reconstruct_depth(frames, camera: PinholeModel, projector: PinholeModel,
                      config: GrayCodeConfig,
                      min_contrast: float = MIN_CONTRAST,
                      ) -> tuple[DepthFrame, CorrespondenceMap]:
    """Full binarize -> decode -> triangulate pipeline.

    Invalid correspondences and failed triangulations (degenerate, behind
    the camera, non-finite) all land at depth 0.
    """
    obs = binarize(frames, min_contrast=min_contrast)
    cmap = decode_correspondence(obs, config)
    depth = _triangulate_grid(cmap, camera, projector)
    return DepthFrame(depth=depth), cmap


def baseline_length(camera: PinholeModel, projector: PinholeModel) -> float:
    return float(np.linalg.norm(camera.center - projector.center))


def quantization_bound(camera: PinholeModel, projector: PinholeModel, z):
    """Depth error from a one-column correspondence error at depth z."""
    b = baseline_length(camera, projector)
    if b <= 0.0:
        raise DegenerateGeometry("camera and projector centers coincide")
    return np.asarray(z, dtype=np.float64) ** 2 / (projector.fx * b)


def depth_metrics(recon, gt, camera: PinholeModel,
                  projector: PinholeModel) -> dict:
    """Scalar summary of reconstruction quality against ground truth.

    A flying pixel is a mutually valid pixel whose error exceeds 10x the
    rig's quantization bound at the true depth.
    """
    recon = recon.depth if isinstance(recon, DepthFrame) else np.asarray(recon)
    gt = gt.depth_gt if hasattr(gt, "depth_gt") else np.asarray(gt)
    if recon.shape != gt.shape:
        raise ResolutionMismatch(f"recon {recon.shape} vs gt {gt.shape}")
    total = recon.size
    valid = recon > 0.0
    gt_valid = gt > 0.0
    both = valid & gt_valid
    err = np.abs(recon[both] - gt[both])
    bound = quantization_bound(camera, projector, gt[both])
    return {
        "valid_ratio": float(valid.sum()) / total,
        "shadow_ratio": float((~valid & gt_valid).sum()) / total,
        "mae": float(err.mean()) if err.size else 0.0,
        "flying_pixel_count": int((err > 10.0 * bound).sum()),
        "mutually_valid": int(both.sum()),
    }


def save_correspondence_png(path: str | Path, cmap: CorrespondenceMap) -> None:
    """Debug export: decoded column per pixel, 65535 = invalid."""
    out = np.where(cmap.valid, cmap.columns, INVALID_COLUMN_PNG)
    save_png16(path, out.astype(np.uint16))


def load_correspondence_png(path: str | Path, column_count: int) -> CorrespondenceMap:
    raw = load_png16(path)
    valid = raw != INVALID_COLUMN_PNG
    columns = np.where(valid, raw.astype(np.int32), np.int32(-1))
    return CorrespondenceMap(columns=columns, valid=valid,
                             column_count=column_count)
