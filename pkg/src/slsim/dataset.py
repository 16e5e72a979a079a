"""Annotations (RLE masks, boxes, poses) and the on-disk dataset layout.

Masks use column-major run-length encoding with a leading background run,
so standard annotation tooling can consume them directly. Scene export is
atomic: artifacts land in a temp directory that is renamed into place, and
partial directories are removed on failure.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (ConfigError, ConsistencyFailure, IoFailure,
                     UnknownInstanceId)
from .geometry import Pose
from .imageio import (load_gray_png, load_pfm, load_png16, load_rgb_png,
                      save_gray_png, save_pfm, save_png16, save_rgb_png)
from .render import GroundTruthFrames
from .scene import SceneDescription

FORMAT_VERSION = "1"

SCENE_FILES = ("rgb.png", "depth_gt.pfm", "depth_recon.pfm", "instance.png",
               "annotations.json")


def scene_dir_name(index: int) -> str:
    if index < 0:
        raise ConfigError(f"scene index must be non-negative, got {index}")
    return f"scene_{index:06d}"


@dataclass(frozen=True)
class RLEMask:
    """Column-major run lengths; first run counts background (zero) pixels."""

    size: tuple[int, int]  # (height, width)
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        size = (int(self.size[0]), int(self.size[1]))
        object.__setattr__(self, "size", size)
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise ConfigError("run lengths must be non-negative")
        if sum(counts) != size[0] * size[1]:
            raise ConfigError(
                f"run lengths sum to {sum(counts)}, expected {size[0] * size[1]}")

    def to_dict(self) -> dict:
        return {"size": list(self.size), "counts": list(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "RLEMask":
        unknown = set(d) - {"size", "counts"}
        if unknown:
            raise ConfigError(f"unknown mask keys: {sorted(unknown)}")
        return cls(size=tuple(d["size"]), counts=tuple(d["counts"]))


def rle_encode(mask: np.ndarray) -> RLEMask:
    """Encode a binary mask; decode(encode(m)) == m exactly."""
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ConfigError(f"mask must be 2-D, got shape {mask.shape}")
    values = np.unique(mask)
    if not np.all(np.isin(values, (0, 1))):
        raise ConfigError("mask must be binary")
    flat = mask.astype(bool).ravel(order="F")
    if flat.size == 0:
        return RLEMask(size=mask.shape, counts=(0,))
    change = np.nonzero(flat[1:] != flat[:-1])[0] + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return RLEMask(size=mask.shape, counts=tuple(counts))


def rle_decode(rle: RLEMask) -> np.ndarray:
    h, w = rle.size
    flat = np.zeros(h * w, dtype=bool)
    pos = 0
    inside = False
    for run in rle.counts:
        if inside:
            flat[pos:pos + run] = True
        pos += run
        inside = not inside
    return flat.reshape((w, h)).T  # undo column-major flattening


@dataclass(frozen=True)
class Annotation:
    """Ground truth for one instance; bbox is None when fully occluded."""

    instance_id: int
    class_label: str
    pose: Pose
    bbox: tuple[int, int, int, int] | None  # (x, y, w, h), tight
    mask: RLEMask
    visible_pixels: int

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "class_label": self.class_label,
            "pose": self.pose.to_dict(),
            "bbox": list(self.bbox) if self.bbox is not None else None,
            "mask": self.mask.to_dict(),
            "visible_pixels": self.visible_pixels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Annotation":
        bbox = tuple(d["bbox"]) if d.get("bbox") is not None else None
        return cls(instance_id=int(d["instance_id"]),
                   class_label=d["class_label"],
                   pose=Pose.from_dict(d["pose"]), bbox=bbox,
                   mask=RLEMask.from_dict(d["mask"]),
                   visible_pixels=int(d["visible_pixels"]))


@dataclass(frozen=True)
class AnnotationSet:
    """All instance annotations for one scene plus capture metadata."""

    annotations: tuple[Annotation, ...]
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"instances": [a.to_dict() for a in self.annotations],
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationSet":
        return cls(annotations=tuple(Annotation.from_dict(a)
                                     for a in d["instances"]),
                   meta=d.get("meta", {}))


def _tight_bbox(mask: np.ndarray) -> tuple[int, int, int, int] | None:
    rows, cols = np.nonzero(mask)
    if rows.size == 0:
        return None
    return (int(cols.min()), int(rows.min()),
            int(cols.max() - cols.min() + 1), int(rows.max() - rows.min() + 1))


def compute_annotations(gt: GroundTruthFrames, scene: SceneDescription,
                        meta: dict | None = None) -> AnnotationSet:
    """Per-instance masks, boxes, and poses from the rendered instance map.

    Fully occluded instances are kept with an empty mask, a null bbox, and
    zero visible pixels.
    """
    imap = gt.instance_map
    present = set(int(i) for i in np.unique(imap)) - {0}
    known = {inst.instance_id for inst in scene.instances}
    orphans = present - known
    if orphans:
        raise UnknownInstanceId(
            f"instance map contains ids {sorted(orphans)} absent from the scene")
    annotations = []
    for inst in scene.instances:
        mask = imap == inst.instance_id
        annotations.append(Annotation(
            instance_id=inst.instance_id,
            class_label=inst.class_label,
            pose=inst.pose,
            bbox=_tight_bbox(mask),
            mask=rle_encode(mask),
            visible_pixels=int(mask.sum()),
        ))
    return AnnotationSet(annotations=tuple(annotations),
                         meta=dict(meta) if meta else {})


def new_manifest(name: str, rig: dict, pattern_config: dict,
                 render_settings: dict | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "dataset_name": name,
        "rig": rig,
        "pattern_config": pattern_config,
        "render_settings": render_settings or {},
        "scenes": [],
    }


def save_manifest(path: str | Path, manifest: dict) -> None:
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ConfigError(
            f"manifest format_version must be {FORMAT_VERSION!r}, "
            f"got {manifest.get('format_version')!r}")
    path = Path(path)
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    tmp.replace(path)


def load_manifest(path: str | Path) -> dict:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoFailure(f"cannot read manifest {path}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(
            f"unsupported manifest format_version {version!r}")
    return manifest


def export_scene_record(out_dir: str | Path, scene_index: int,
                        gt: GroundTruthFrames,
                        recon_depth: np.ndarray,
                        pattern_images: list[np.ndarray],
                        annotations: AnnotationSet) -> dict:
    """Write one scene directory and return its manifest entry.

    Layout: rgb.png, depth_gt.pfm, depth_recon.pfm, instance.png,
    patterns/pattern_NN.png, annotations.json.
    """
    if gt.rgb is None:
        raise ConsistencyFailure("scene export requires a rendered RGB image")
    shape = gt.depth_gt.shape
    if gt.rgb.shape[:2] != shape or gt.instance_map.shape != shape \
            or recon_depth.shape != shape:
        raise ConsistencyFailure(
            f"artifact resolutions disagree: depth {shape}, rgb "
            f"{gt.rgb.shape[:2]}, instances {gt.instance_map.shape}, "
            f"recon {recon_depth.shape}")
    for i, frame in enumerate(pattern_images):
        if frame.shape != shape:
            raise ConsistencyFailure(
                f"pattern frame {i} shape {frame.shape} differs from {shape}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = scene_dir_name(scene_index)
    final = out_dir / name
    tmp = out_dir / f".{name}.tmp"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        (tmp / "patterns").mkdir(parents=True)
        save_rgb_png(tmp / "rgb.png", gt.rgb)
        save_pfm(tmp / "depth_gt.pfm", gt.depth_gt)
        save_pfm(tmp / "depth_recon.pfm", recon_depth)
        save_png16(tmp / "instance.png", gt.instance_map)
        for i, frame in enumerate(pattern_images):
            save_gray_png(tmp / "patterns" / f"pattern_{i:02d}.png", frame)
        payload = json.dumps(annotations.to_dict(), indent=2, sort_keys=True)
        (tmp / "annotations.json").write_text(payload + "\n")
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)
    return {
        "name": name,
        "instance_count": len(annotations.annotations),
        "pattern_frames": len(pattern_images),
        "resolution": [int(shape[1]), int(shape[0])],
    }


def validate_scene(scene_dir: str | Path) -> list[str]:
    """Integrity check of one exported scene; returns a list of problems."""
    scene_dir = Path(scene_dir)
    problems = []
    if not scene_dir.is_dir():
        return [f"{scene_dir} is not a directory"]
    for fname in SCENE_FILES:
        if not (scene_dir / fname).is_file():
            problems.append(f"missing {fname}")
    patterns_dir = scene_dir / "patterns"
    if not patterns_dir.is_dir():
        problems.append("missing patterns/")
    if problems:
        return problems

    try:
        rgb = load_rgb_png(scene_dir / "rgb.png")
        depth_gt = load_pfm(scene_dir / "depth_gt.pfm")
        depth_recon = load_pfm(scene_dir / "depth_recon.pfm")
        imap = load_png16(scene_dir / "instance.png")
        payload = json.loads((scene_dir / "annotations.json").read_text())
        annset = AnnotationSet.from_dict(payload)
    except Exception as exc:
        return [f"unreadable artifact: {exc}"]

    shape = depth_gt.shape
    if rgb.shape[:2] != shape:
        problems.append(f"rgb resolution {rgb.shape[:2]} != depth {shape}")
    if depth_recon.shape != shape:
        problems.append(f"recon resolution {depth_recon.shape} != depth {shape}")
    if imap.shape != shape:
        problems.append(f"instance resolution {imap.shape} != depth {shape}")
    if np.any(depth_gt < 0) or not np.all(np.isfinite(depth_gt)):
        problems.append("depth_gt has negative or non-finite values")
    if np.any(depth_recon < 0) or not np.all(np.isfinite(depth_recon)):
        problems.append("depth_recon has negative or non-finite values")

    pattern_files = sorted(patterns_dir.glob("pattern_*.png"))
    if not pattern_files:
        problems.append("no pattern frames")
    for pfile in pattern_files:
        try:
            frame = load_gray_png(pfile)
        except Exception as exc:
            problems.append(f"unreadable {pfile.name}: {exc}")
            continue
        if frame.shape != shape:
            problems.append(f"{pfile.name} resolution {frame.shape} != {shape}")

    seen_ids = set(int(i) for i in np.unique(imap)) - {0}
    ann_ids = {a.instance_id for a in annset.annotations}
    if not seen_ids <= ann_ids:
        problems.append(
            f"instance map ids {sorted(seen_ids - ann_ids)} lack annotations")
    total_visible = 0
    for ann in annset.annotations:
        if ann.mask.size != shape:
            problems.append(
                f"instance {ann.instance_id} mask size {ann.mask.size} != {shape}")
            continue
        mask = rle_decode(ann.mask)
        if ann.visible_pixels != int(mask.sum()):
            problems.append(
                f"instance {ann.instance_id} visible_pixels "
                f"{ann.visible_pixels} != mask popcount {int(mask.sum())}")
        if not np.array_equal(mask, imap == ann.instance_id):
            problems.append(
                f"instance {ann.instance_id} mask disagrees with instance map")
        if ann.bbox is not None and _tight_bbox(mask) != ann.bbox:
            problems.append(f"instance {ann.instance_id} bbox is not tight")
        if ann.bbox is None and mask.any():
            problems.append(
                f"instance {ann.instance_id} has pixels but a null bbox")
        total_visible += ann.visible_pixels
    if total_visible != int((imap > 0).sum()):
        problems.append(
            f"visible pixel sum {total_visible} != nonzero instance pixels "
            f"{int((imap > 0).sum())}")

    expected = {scene_dir / f for f in SCENE_FILES} | set(pattern_files)
    actual = {p for p in scene_dir.rglob("*") if p.is_file()}
    unreferenced = actual - expected
    if unreferenced:
        problems.append(
            "unreferenced files: "
            + ", ".join(sorted(str(p.relative_to(scene_dir))
                               for p in unreferenced)))
    return problems


def validate_dataset(root: str | Path) -> list[str]:
    """Validate the manifest and every scene it references."""
    root = Path(root)
    problems = []
    manifest_path = root / "manifest.json"
    try:
        manifest = load_manifest(manifest_path)
    except (IoFailure, ConfigError) as exc:
        return [str(exc)]
    names = [entry["name"] for entry in manifest.get("scenes", [])]
    if len(names) != len(set(names)):
        problems.append("duplicate scene names in manifest")
    for name in names:
        scene_problems = validate_scene(root / name)
        problems.extend(f"{name}: {p}" for p in scene_problems)
    on_disk = {p.name for p in root.iterdir()
               if p.is_dir() and p.name.startswith("scene_")}
    unlisted = on_disk - set(names)
    if unlisted:
        problems.append(f"scene dirs not in manifest: {sorted(unlisted)}")
    return problems
