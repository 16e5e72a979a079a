"""Command-line entry point: generate, patterns, render, reconstruct, validate, info.

Progress goes to stderr; each command's machine-readable summary is a single
JSON document on stdout. Exit codes: 0 success, 1 configuration errors,
2 capacity/geometry/validation errors, 3 I/O errors.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_pipeline_config
from .dataset import (compute_annotations, export_scene_record, load_manifest,
                      new_manifest, save_manifest, validate_dataset,
                      validate_scene)
from .errors import (CapacityExceeded, ConfigError, ConsistencyFailure,
                     DegenerateGeometry, DepthNonPositive, DoesNotFit,
                     EmptyScene, IndexOutOfRange, IoFailure, LayoutMismatch,
                     RasterMismatch, ResolutionMismatch, UnknownInstanceId)
from .geometry import PinholeModel, load_rig
from .graycode import (GrayCodeConfig, generate_pattern_stack,
                       save_pattern_stack)
from .imageio import (load_gray_png, load_pfm, save_gray_png, save_pfm,
                      save_png16, save_rgb_png)
from .reconstruct import (MIN_CONTRAST, depth_metrics, reconstruct_depth,
                          save_correspondence_png)
from .render import (GroundTruthFrames, build_tracer, render_ground_truth,
                     render_pattern_frames, render_rgb)
from .scenegen import build_scene, derive_scene_seed, load_pose_list

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_GEOMETRY = 2
EXIT_IO = 3

_CONFIG_ERRORS = (ConfigError, LayoutMismatch, RasterMismatch,
                  ResolutionMismatch, IndexOutOfRange)
_GEOMETRY_ERRORS = (CapacityExceeded, DoesNotFit, DegenerateGeometry,
                    EmptyScene, UnknownInstanceId, DepthNonPositive,
                    ConsistencyFailure)
_IO_ERRORS = (IoFailure, OSError)


def _log(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _emit(summary: dict) -> None:
    json.dump(summary, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _parse_raster(text: str) -> tuple[int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise ConfigError(f"raster must look like 1024x768, got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _generate_scene(cfg: PipelineConfig, base_seed: int, index: int,
                    out_dir: Path) -> dict:
    scene_seed = derive_scene_seed(base_seed, index)
    _log(f"[scene {index:06d}] seed={scene_seed} building scene")
    poses = load_pose_list(cfg.poses_path) if cfg.poses_path else None
    scene = build_scene(cfg.clutter_config(scene_seed), cfg.materials,
                        area_lights=cfg.area_lights,
                        ambient_light=cfg.ambient_light,
                        bin_material=cfg.bin_material,
                        wall_thickness=cfg.wall_thickness,
                        class_label=cfg.class_label, poses=poses)
    tracer = build_tracer(scene)
    _log(f"[scene {index:06d}] rendering ground truth and RGB")
    gt = render_ground_truth(scene, cfg.camera, tracer=tracer)
    rgb = render_rgb(scene, cfg.camera, cfg.render, tracer=tracer)
    gt = GroundTruthFrames(depth_gt=gt.depth_gt, instance_map=gt.instance_map,
                           rgb=rgb)
    stack = generate_pattern_stack(cfg.pattern, cfg.projector.width,
                                   cfg.pattern_raster_height)
    _log(f"[scene {index:06d}] rendering {stack.frame_count} pattern frames")
    frames = render_pattern_frames(scene, cfg.camera, cfg.projector, stack,
                                   cfg.render, cfg.projector_power,
                                   tracer=tracer)
    _log(f"[scene {index:06d}] reconstructing depth")
    depth, _ = reconstruct_depth(frames, cfg.camera, cfg.projector,
                                 cfg.pattern, min_contrast=cfg.min_contrast)
    meta = {"rig": cfg.rig_dict(), "seed": scene_seed,
            "pattern": cfg.pattern_dict(), "render": cfg.render_dict()}
    annotations = compute_annotations(gt, scene, meta=meta)
    entry = export_scene_record(out_dir, index, gt, depth.depth, frames,
                                annotations)
    entry["seed"] = scene_seed
    metrics = depth_metrics(depth, gt.depth_gt, cfg.camera, cfg.projector)
    entry["metrics"] = metrics
    _log(f"[scene {index:06d}] done: valid_ratio={metrics['valid_ratio']:.3f}")
    return entry


def _scene_worker(config_path: str, base_seed: int, index: int,
                  out_dir: str) -> dict:
    cfg = load_pipeline_config(config_path)
    return _generate_scene(cfg, base_seed, index, Path(out_dir))


def cmd_generate(args) -> int:
    config_path = Path(args.config).resolve()
    cfg = load_pipeline_config(config_path)
    base_seed = cfg.resolve_seed(args.seed)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    if out_dir is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    count = args.scenes if args.scenes is not None else cfg.scene_count
    if count < 1:
        raise ConfigError(f"scene count must be >= 1, got {count}")
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [pool.submit(_scene_worker, str(config_path), base_seed,
                                   i, str(out_dir)) for i in range(count)]
            entries = [f.result() for f in futures]
    else:
        entries = [_generate_scene(cfg, base_seed, i, out_dir)
                   for i in range(count)]

    manifest = new_manifest(cfg.dataset_name, cfg.rig_dict(),
                            cfg.pattern_dict(), cfg.render_dict())
    manifest["scenes"] = entries
    manifest["seed"] = base_seed
    save_manifest(out_dir / "manifest.json", manifest)
    _emit({"dataset_name": cfg.dataset_name, "output_dir": str(out_dir),
           "scene_count": count, "seed": base_seed,
           "scenes": [{"name": e["name"], "seed": e["seed"],
                       "metrics": e["metrics"]} for e in entries]})
    return EXIT_OK


def cmd_patterns(args) -> int:
    width, height = _parse_raster(args.raster)
    kwargs = {"column_count": args.columns}
    if args.bits is not None:
        kwargs["bit_count"] = args.bits
    stack = generate_pattern_stack(GrayCodeConfig(**kwargs), width, height)
    out_dir = Path(args.out)
    paths = save_pattern_stack(stack, out_dir)
    _log(f"wrote {len(paths)} pattern frames to {out_dir}")
    _emit({"out": str(out_dir), "frames": len(paths),
           "bit_count": stack.config.bit_count,
           "column_count": stack.config.column_count,
           "raster": [width, height]})
    return EXIT_OK


def cmd_render(args) -> int:
    cfg = load_pipeline_config(Path(args.config).resolve())
    base_seed = cfg.resolve_seed(args.seed)
    scene_seed = derive_scene_seed(base_seed, args.scene_index)
    out_dir = Path(args.out) if args.out else cfg.output_dir
    if out_dir is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    out_dir.mkdir(parents=True, exist_ok=True)

    _log(f"rendering scene index {args.scene_index} (seed {scene_seed})")
    poses = load_pose_list(cfg.poses_path) if cfg.poses_path else None
    scene = build_scene(cfg.clutter_config(scene_seed), cfg.materials,
                        area_lights=cfg.area_lights,
                        ambient_light=cfg.ambient_light,
                        bin_material=cfg.bin_material,
                        wall_thickness=cfg.wall_thickness,
                        class_label=cfg.class_label, poses=poses)
    tracer = build_tracer(scene)
    gt = render_ground_truth(scene, cfg.camera, workers=args.jobs,
                             tracer=tracer)
    rgb = render_rgb(scene, cfg.camera, cfg.render, workers=args.jobs,
                     tracer=tracer)
    save_rgb_png(out_dir / "rgb.png", rgb)
    save_pfm(out_dir / "depth_gt.pfm", gt.depth_gt)
    save_png16(out_dir / "instance.png", gt.instance_map)
    stack = generate_pattern_stack(cfg.pattern, cfg.projector.width,
                                   cfg.pattern_raster_height)
    frames = render_pattern_frames(scene, cfg.camera, cfg.projector, stack,
                                   cfg.render, cfg.projector_power,
                                   workers=args.jobs, tracer=tracer)
    patterns_dir = out_dir / "patterns"
    patterns_dir.mkdir(exist_ok=True)
    for i, frame in enumerate(frames):
        save_gray_png(patterns_dir / f"pattern_{i:02d}.png", frame)
    _emit({"out": str(out_dir), "scene_index": args.scene_index,
           "seed": scene_seed, "pattern_frames": len(frames),
           "resolution": [cfg.camera.width, cfg.camera.height]})
    return EXIT_OK


def _load_frame_dir(frames_dir: Path) -> list[np.ndarray]:
    files = sorted(frames_dir.glob("pattern_*.png"))
    if not files:
        raise IoFailure(f"no pattern_NN.png frames in {frames_dir}")
    indices = []
    for f in files:
        m = re.fullmatch(r"pattern_(\d{2})\.png", f.name)
        if not m:
            raise ConfigError(f"unexpected frame name {f.name}")
        indices.append(int(m.group(1)))
    if indices != list(range(len(files))):
        raise ConfigError(f"pattern frames are not contiguous: {indices}")
    return [load_gray_png(f) for f in files]


def cmd_reconstruct(args) -> int:
    frames = _load_frame_dir(Path(args.frames))
    camera, projector = load_rig(args.rig)
    try:
        gc_raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {args.config}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{args.config} is not valid JSON: {exc}") from exc
    unknown = set(gc_raw) - {"column_count", "bit_count", "min_contrast"}
    if unknown:
        raise ConfigError(f"unknown decode config keys: {sorted(unknown)}")
    if "column_count" not in gc_raw:
        raise ConfigError("decode config requires column_count")
    kwargs = {"column_count": int(gc_raw["column_count"])}
    if "bit_count" in gc_raw:
        kwargs["bit_count"] = int(gc_raw["bit_count"])
    config = GrayCodeConfig(**kwargs)
    min_contrast = float(gc_raw.get("min_contrast", MIN_CONTRAST))

    _log(f"decoding {len(frames)} frames at "
         f"{frames[0].shape[1]}x{frames[0].shape[0]}")
    depth, cmap = reconstruct_depth(frames, camera, projector, config,
                                    min_contrast=min_contrast)
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True)
    save_pfm(out, depth.depth)
    if args.correspondence:
        save_correspondence_png(args.correspondence, cmap)
    valid_ratio = float(depth.valid_mask.mean())
    _emit({"out": str(out), "valid_ratio": valid_ratio,
           "frames": len(frames), "column_count": config.column_count})
    return EXIT_OK


def _rig_from_manifest(manifest: dict) -> tuple[PinholeModel, PinholeModel]:
    rig = manifest.get("rig", {})
    return (PinholeModel.from_dict(rig["camera"]),
            PinholeModel.from_dict(rig["projector"]))


def _scene_metrics(scene_dir: Path, camera: PinholeModel,
                   projector: PinholeModel) -> dict:
    recon = load_pfm(scene_dir / "depth_recon.pfm")
    gt = load_pfm(scene_dir / "depth_gt.pfm")
    return depth_metrics(recon, gt, camera, projector)


def cmd_validate(args) -> int:
    path = Path(args.path)
    problems: list[str] = []
    metrics: dict[str, dict] = {}

    if (path / "manifest.json").is_file():
        problems = validate_dataset(path)
        manifest = load_manifest(path / "manifest.json")
        try:
            camera, projector = _rig_from_manifest(manifest)
        except (KeyError, ConfigError):
            camera = projector = None
            problems.append("manifest rig is missing or malformed")
        if camera is not None:
            for entry in manifest.get("scenes", []):
                scene_dir = path / entry["name"]
                if scene_dir.is_dir():
                    metrics[entry["name"]] = _scene_metrics(
                        scene_dir, camera, projector)
    elif path.is_dir():
        problems = validate_scene(path)
        camera = projector = None
        if args.rig:
            camera, projector = load_rig(args.rig)
        elif (path.parent / "manifest.json").is_file():
            manifest = load_manifest(path.parent / "manifest.json")
            camera, projector = _rig_from_manifest(manifest)
        if camera is not None and not problems:
            metrics[path.name] = _scene_metrics(path, camera, projector)
    else:
        raise IoFailure(f"{path} is not a scene or dataset directory")

    # A reconstruction with zero valid pixels is a broken scene, not a metric.
    for name, m in sorted(metrics.items()):
        if m["valid_ratio"] == 0.0:
            problems.append(f"{name}: depth_recon has no valid pixels "
                            "(valid_ratio=0)")

    ok = not problems
    for p in problems:
        _log(f"FAIL: {p}")
    _log("validation passed" if ok else
         f"validation failed with {len(problems)} problem(s)")
    _emit({"ok": ok, "problems": problems, "metrics": metrics})
    return EXIT_OK if ok else EXIT_GEOMETRY


def cmd_info(args) -> int:
    summary = {
        "version": __version__,
        "defaults": {
            "samples_per_pixel": 20,
            "max_bounces": 3,
            "min_contrast": MIN_CONTRAST,
            "max_code_bits": 16,
            "manifest_format_version": "1",
            "config_version": 1,
        },
    }
    if args.config:
        cfg = load_pipeline_config(args.config)
        summary["config"] = {
            "dataset_name": cfg.dataset_name,
            "scene_count": cfg.scene_count,
            "instance_count": cfg.count,
            "camera_resolution": [cfg.camera.width, cfg.camera.height],
            "projector_resolution": [cfg.projector.width,
                                     cfg.projector.height],
            "pattern": cfg.pattern_dict(),
            "render": cfg.render_dict(),
            "seed": cfg.seed,
        }
    _emit(summary)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slsim",
        description="Structured-light camera simulator: cluttered-bin scene "
                    "synthesis, gray-code rendering, depth reconstruction, "
                    "and dataset export.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="run the full pipeline for N scenes")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", help="output dataset directory (overrides config)")
    p.add_argument("--seed", type=int, help="base seed (overrides config)")
    p.add_argument("--scenes", type=int, help="scene count (overrides config)")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel scene workers (default 1)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("patterns", help="write a gray-code pattern stack")
    p.add_argument("--columns", type=int, required=True,
                   help="projector column count")
    p.add_argument("--raster", required=True, help="projector raster, WxH")
    p.add_argument("--bits", type=int, help="override the derived bit count")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_patterns)

    p = sub.add_parser("render", help="render one scene's raw artifacts")
    p.add_argument("--config", required=True, help="pipeline config JSON")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="base seed (overrides config)")
    p.add_argument("--scene-index", type=int, default=0,
                   help="scene index to derive the per-scene seed (default 0)")
    p.add_argument("--jobs", type=int, default=None,
                   help="row-band render workers")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("reconstruct",
                       help="decode rendered frames into a depth map")
    p.add_argument("--frames", required=True,
                   help="directory of pattern_NN.png captures")
    p.add_argument("--rig", required=True, help="rig JSON (camera+projector)")
    p.add_argument("--config", required=True,
                   help="decode config JSON (column_count, bit_count, "
                        "min_contrast)")
    p.add_argument("--out", required=True, help="output depth PFM path")
    p.add_argument("--correspondence",
                   help="also write the decoded column map as 16-bit PNG")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("validate",
                       help="check an exported scene or dataset directory")
    p.add_argument("path", help="scene dir or dataset root")
    p.add_argument("--rig", help="rig JSON for depth metrics on a bare scene")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("info", help="print versions, defaults, and config echo")
    p.add_argument("--config", help="pipeline config JSON to validate and echo")
    p.set_defaults(func=cmd_info)
    return parser


def entry(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG
    except _GEOMETRY_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_GEOMETRY
    except _IO_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(entry())
