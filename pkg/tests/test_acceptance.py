"""End-to-end acceptance gate for the simulator.

Every test prints one [PASS]/[FAIL] verdict line on the real stdout (so the
lines survive pytest's capture) and then asserts. The checks lean on
independent oracles: brute-force ray scans, closed-form radiometry,
forward-projection identities, and separating-axis box tests.
"""

import json
import sys
import time

import numpy as np
import pytest

from slsim import (
    CapacityExceeded,
    ClutterConfig,
    GrayCodeConfig,
    Material,
    PinholeModel,
    Pose,
    RenderSettings,
    SceneInstance,
    box_mesh,
    build_projection_matrix,
    build_scene,
    compute_annotations,
    decode,
    encode,
    generate_pattern_stack,
    quad_mesh,
    quantization_bound,
    reconstruct_depth,
    render_ground_truth,
    render_pattern_frames,
    rle_decode,
    rle_encode,
    sample_poses,
    settle,
    triangulate,
    validate_dataset,
)
from slsim.cli import entry
from slsim.graycode import gray_decode_array, gray_encode_value
from slsim.scene import BinBox

from helpers import (
    box_penetration_depth,
    dir_digest,
    down_camera,
    forward_camera,
    pixel_rays,
    ray_scan,
    scene_triangles,
    segment_occluded,
    simple_scene,
    slab,
)


_CAPTURE = None


@pytest.fixture(autouse=True)
def _verdict_channel(capfd):
    """Verdict lines must reach the terminal even under fd-level capture."""
    global _CAPTURE
    _CAPTURE = capfd
    yield
    _CAPTURE = None


def report(num: int, ok: bool, detail: str) -> None:
    tag = "PASS" if ok else "FAIL"
    line = f"[{tag}] criterion {num}: {detail}"
    if _CAPTURE is None:
        print(line, file=sys.__stdout__, flush=True)
    else:
        with _CAPTURE.disabled():
            print(line, flush=True)


def dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    padded = np.pad(mask, radius)
    out = np.zeros_like(mask)
    h, w = mask.shape
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out |= padded[dy:dy + h, dx:dx + w]
    return out


def depth_steps(depth: np.ndarray, threshold: float) -> np.ndarray:
    """Pixels adjacent to a jump larger than threshold, either axis."""
    disc = np.zeros(depth.shape, dtype=bool)
    jump = np.abs(np.diff(depth, axis=1)) > threshold
    disc[:, :-1] |= jump
    disc[:, 1:] |= jump
    jump = np.abs(np.diff(depth, axis=0)) > threshold
    disc[:-1] |= jump
    disc[1:] |= jump
    return disc


def test_criterion_1_gray_codec():
    start = time.perf_counter()
    problems = []
    for bits in range(1, 13):
        n = np.arange(1 << bits, dtype=np.uint32)
        codes = np.array([gray_encode_value(int(v)) for v in n],
                         dtype=np.uint32)
        if not np.array_equal(gray_decode_array(codes), n):
            problems.append(f"value round-trip failed at {bits} bits")
        if not all(decode(encode(int(v), bits)) == int(v) for v in n):
            problems.append(f"codeword round-trip failed at {bits} bits")
        flips = np.bitwise_count(codes ^ np.roll(codes, -1))
        if not np.all(flips == 1):  # includes the cyclic wrap pair
            problems.append(f"adjacency violated at {bits} bits")
    elapsed = time.perf_counter() - start
    if elapsed >= 1.0:
        problems.append(f"took {elapsed:.2f}s, budget 1s")
    ok = not problems
    report(1, ok, f"gray codec exhaustive round-trip and single-bit "
                  f"adjacency for 1..12 bits in {elapsed:.2f}s"
                  + ("" if ok else f"; {problems}"))
    assert ok, problems


def _quat_rotation(rng: np.random.Generator, spread: float) -> np.ndarray:
    q = np.array([1.0, *rng.uniform(-spread, spread, 3)])
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def test_criterion_2_triangulation_oracle():
    rng = np.random.default_rng(20240917)
    start = time.perf_counter()
    worst = 0.0
    checked = 0
    for _ in range(20):
        cam = PinholeModel.looking_from(
            float(rng.uniform(400, 1500)), float(rng.uniform(400, 1500)),
            319.5, 239.5, 640, 480,
            position=rng.uniform(-0.05, 0.05, 3),
            orientation=_quat_rotation(rng, 0.12))
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        proj = PinholeModel.looking_from(
            float(rng.uniform(400, 1500)), float(rng.uniform(400, 1500)),
            511.5, 383.5, 1024, 768,
            position=direction * rng.uniform(0.05, 0.3),
            orientation=_quat_rotation(rng, 0.12))
        mc = build_projection_matrix(cam).m
        mp = build_projection_matrix(proj).m
        u = rng.uniform(0.0, cam.width - 1.0, 1000)
        v = rng.uniform(0.0, cam.height - 1.0, 1000)
        z = rng.uniform(0.4, 3.0, 1000)
        dev = np.stack([(u - cam.cx) / cam.fx * z,
                        (v - cam.cy) / cam.fy * z, z], axis=1)
        pts = dev @ cam.rotation + cam.center  # R^T dev, row convention
        pdev = pts @ proj.rotation.T + proj.translation
        u_p = proj.fx * pdev[:, 0] / pdev[:, 2] + proj.cx
        for i in range(1000):
            got = triangulate(u[i], v[i], u_p[i], mc, mp)
            worst = max(worst, float(np.linalg.norm(got - pts[i])))
            checked += 1
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 5.0 and checked == 20000
    report(2, ok, f"triangulation vs forward projection, {checked} points "
                  f"on 20 rigs, max error {worst:.2e} m in {elapsed:.2f}s")
    assert ok, (worst, elapsed)


def test_criterion_3_rectified_plane_bound():
    start = time.perf_counter()
    cam = forward_camera(1000.0, 256, 256)
    proj = forward_camera(1000.0, 1024, 768, position=(0.2, 0.0, 0.0))
    plane = SceneInstance(mesh=quad_mesh(1.2, 1.2),
                          pose=Pose(np.eye(3), (0.0, 0.0, 1.0)),
                          instance_id=1, class_label="plane",
                          material=Material(albedo=(0.8, 0.8, 0.8)))
    scene = simple_scene([plane])
    config = GrayCodeConfig(column_count=1024)
    stack = generate_pattern_stack(config, 1024, 768)
    frames = render_pattern_frames(
        scene, cam, proj, stack,
        RenderSettings(samples_per_pixel=128, max_bounces=0), power=30.0)
    depth, _ = reconstruct_depth(frames, cam, proj, config)
    valid = depth.valid_mask
    valid_ratio = float(valid.mean())
    err = np.abs(depth.depth[valid] - 1.0)
    bound = float(quantization_bound(cam, proj, 1.0))  # 5 mm at this rig
    max_err = float(err.max())
    rmse = float(np.sqrt(np.mean(err ** 2)))
    elapsed = time.perf_counter() - start
    ok = (valid_ratio >= 0.95 and max_err <= bound and rmse <= 2.9e-3
          and elapsed < 300.0)
    report(3, ok, f"rectified plane at 1 m: valid {valid_ratio:.1%}, "
                  f"max |dZ| {max_err * 1e3:.3f} mm (bound "
                  f"{bound * 1e3:.1f} mm), RMSE {rmse * 1e3:.3f} mm "
                  f"(limit 2.9 mm) in {elapsed:.0f}s")
    assert ok, (valid_ratio, max_err, rmse, elapsed)


def test_criterion_4_shadow_oracle():
    cam = down_camera(180.0, 128, 128, position=(0.0, 0.0, 1.0))
    proj = down_camera(160.0, 256, 192, position=(0.3, 0.0, 1.0))
    scene = simple_scene([
        slab(1, (1.0, 1.0, 0.02), (0.0, 0.0, -0.01), albedo=(0.4,) * 3,
             label="floor"),
        slab(2, (0.3, 0.2, 0.04), (-0.05, 0.0, 0.25), albedo=(0.3,) * 3,
             label="blocker"),
    ], ambient=(0.008,) * 3)
    config = GrayCodeConfig(column_count=256)
    stack = generate_pattern_stack(config, 256, 192)
    frames = render_pattern_frames(
        scene, cam, proj, stack,
        RenderSettings(samples_per_pixel=48, max_bounces=1), power=12.0)
    depth, cmap = reconstruct_depth(frames, cam, proj, config,
                                    min_contrast=0.05)

    # independent oracle: brute-force first hit, then a shadow segment
    # toward the projector center over the same triangle soup
    v0, v1, v2 = scene_triangles(scene)
    origins, dirs = pixel_rays(cam)
    t, _ = ray_scan(origins, dirs, v0, v1, v2)
    assert np.all(np.isfinite(t)), "oracle expects full floor coverage"
    pts = origins + dirs * t[:, None]
    shadow = segment_occluded(pts, proj.center, v0, v1, v2).reshape(128, 128)
    zdepth = (t * (dirs @ cam.rotation[2])).reshape(128, 128)

    boundary = dilate(shadow, 2) & dilate(~shadow, 2)
    exclude = boundary | dilate(depth_steps(zdepth, 0.05), 2)
    include = ~exclude
    invalid = ~cmap.valid
    agreement = float((invalid == shadow)[include].mean())

    zeros_match = (np.all(depth.depth[~cmap.valid] == 0.0)
                   and np.all(depth.depth[cmap.valid] > 0.0))
    ok = agreement >= 0.99 and zeros_match and shadow[include].any()
    report(4, ok, f"shadow region vs projector-ray oracle: {agreement:.2%} "
                  f"agreement on {int(include.sum())} non-boundary pixels, "
                  f"invalid pixels exactly zero: {zeros_match}")
    assert ok, (agreement, zeros_match)


def test_criterion_5_flying_pixels():
    cam = down_camera(250.0, 256, 256, position=(0.0, 0.0, 1.0))
    proj = down_camera(900.0, 1024, 768, position=(0.25, 0.0, 1.0))
    a = np.deg2rad(0.7)  # tilt sweeps the edge across pixel phases
    rz = np.array([[np.cos(a), -np.sin(a), 0.0],
                   [np.sin(a), np.cos(a), 0.0],
                   [0.0, 0.0, 1.0]])
    scene = simple_scene([
        slab(1, (0.5, 1.0, 0.4), (-0.25, 0.0, 0.0), albedo=(0.8,) * 3,
             label="near", rotation=rz),
        slab(2, (1.6, 1.6, 0.02), (0.0, 0.0, -0.21), albedo=(0.8,) * 3,
             label="far"),
    ])
    config = GrayCodeConfig(column_count=1024)
    stack = generate_pattern_stack(config, 1024, 768)
    frames = render_pattern_frames(
        scene, cam, proj, stack,
        RenderSettings(samples_per_pixel=128, max_bounces=0), power=30.0)
    depth, _ = reconstruct_depth(frames, cam, proj, config)
    gt = render_ground_truth(scene, cam).depth_gt

    mutual = (depth.depth > 0.0) & (gt > 0.0)
    bound = quantization_bound(cam, proj, np.where(gt > 0, gt, 1.0))
    flying = mutual & (np.abs(depth.depth - gt) > 10.0 * bound)
    band = dilate(depth_steps(gt, 0.05), 2)
    outside = flying & ~band
    ok = flying.any() and not outside.any()
    report(5, ok, f"flying pixels: {int(flying.sum())} pixels beyond 10x "
                  f"quantization bound, {int(outside.sum())} outside the "
                  f"2-pixel discontinuity band")
    assert ok, (int(flying.sum()), int(outside.sum()))


def test_criterion_6_radiometry():
    albedo, power = 0.7, 12.0
    cam = forward_camera(60.0, 48, 48)
    proj = forward_camera(40.0, 48, 48, position=(0.1, 0.0, 0.0))
    plane = SceneInstance(mesh=quad_mesh(4.0, 4.0),
                          pose=Pose(np.eye(3), (0.0, 0.0, 0.8)),
                          instance_id=1, class_label="plane",
                          material=Material(albedo=(albedo,) * 3))
    scene = simple_scene([plane])
    config = GrayCodeConfig(column_count=48)
    stack = generate_pattern_stack(config, 48, 48)
    frames = render_pattern_frames(
        scene, cam, proj, stack,
        RenderSettings(samples_per_pixel=256, max_bounces=0), power=power)
    white = frames[0]  # the stack always leads with the all-white frame

    origins, dirs = pixel_rays(cam)
    t = 0.8 / dirs[:, 2]
    pts = origins + dirs * t[:, None]
    r = pts - proj.center
    dist2 = np.sum(r * r, axis=1)
    cos = 0.8 / np.sqrt(dist2)
    pred = (albedo / np.pi) * power / (4.0 * np.pi * dist2) * cos
    rel = np.abs(white.ravel() - pred) / pred
    ok = rel.mean() <= 0.02
    report(6, ok, f"all-white frame vs inverse-square/cosine closed form: "
                  f"mean relative error {rel.mean():.3%} at 256 spp")
    assert ok, rel.mean()


GEN_CONFIG = {
    "version": 1,
    "dataset_name": "acceptance",
    "seed": 21,
    "scene_count": 2,
    "scene": {
        "mesh": {"primitive": "box", "size": [0.05, 0.04, 0.03]},
        "count": 3,
        "bin_inner_size": [0.3, 0.3, 0.08],
        "drop_height": [0.0, 0.2],
        "material": {"albedo": [0.7, 0.65, 0.6]},
        "ambient_light": [0.01, 0.01, 0.01],
    },
    "rig": {
        "camera": {"fx": 100, "fy": 100, "cx": 23.5, "cy": 23.5,
                   "width": 48, "height": 48,
                   "rotation": [1, 0, 0, 0, -1, 0, 0, 0, -1],
                   "translation": [0, 0, 0.6]},
        "projector": {"fx": 70, "fy": 70, "cx": 15.5, "cy": 11.5,
                      "width": 32, "height": 24,
                      "rotation": [1, 0, 0, 0, -1, 0, 0, 0, -1],
                      "translation": [-0.1, 0, 0.6]},
    },
    "pattern": {"column_count": 32},
    "render": {"samples_per_pixel": 2, "max_bounces": 1,
               "projector_power": 8.0},
    "reconstruct": {"min_contrast": 0.01},
}


@pytest.fixture(scope="module")
def generated_runs(tmp_path_factory):
    """The same tiny dataset generated three times: twice serially, once
    with 8 scene workers."""
    root = tmp_path_factory.mktemp("accept")
    config = root / "config.json"
    config.write_text(json.dumps(GEN_CONFIG))
    runs = {}
    for name, jobs in (("first", 1), ("second", 1), ("jobs8", 8)):
        out = root / name
        code = entry(["generate", "--config", str(config),
                      "--out", str(out), "--jobs", str(jobs)])
        runs[name] = (out, code)
    return runs


def test_criterion_7_determinism(generated_runs):
    codes = [code for _, code in generated_runs.values()]
    digests = {name: dir_digest(path)
               for name, (path, _) in generated_runs.items()}
    ok = (codes == [0, 0, 0]
          and digests["first"] == digests["second"] == digests["jobs8"])
    report(7, ok, f"generate determinism: repeat run "
                  f"{'==' if digests['first'] == digests['second'] else '!='}"
                  f" first, --jobs 8 "
                  f"{'==' if digests['jobs8'] == digests['first'] else '!='}"
                  f" --jobs 1 (sha256 {digests['first'][:12]})")
    assert ok, (codes, digests)


def test_criterion_8_dataset_integrity(generated_runs):
    problems = []

    rng = np.random.default_rng(20240918)
    masks = [np.zeros((5, 7), dtype=bool), np.ones((6, 2), dtype=bool),
             np.eye(8, dtype=bool), np.zeros((1, 1), dtype=bool)]
    while len(masks) < 1000:
        shape = (int(rng.integers(1, 33)), int(rng.integers(1, 33)))
        masks.append(rng.random(shape) < rng.random())
    exact = sum(np.array_equal(rle_decode(rle_encode(m)), m) for m in masks)
    if exact != 1000:
        problems.append(f"RLE round-trip exact on {exact}/1000 masks")

    cam = down_camera(150.0, 96, 96, position=(0.0, 0.0, 0.8))
    mats = [Material(albedo=(0.7, 0.3, 0.3)), Material(albedo=(0.3, 0.7, 0.3))]
    scenes_checked = 0
    for seed in range(20):
        cfg = ClutterConfig(mesh=box_mesh((0.06, 0.05, 0.03)), count=6,
                            bin_inner_size=(0.4, 0.3, 0.1), seed=seed,
                            drop_height=(0.0, 0.25))
        scene = build_scene(cfg, material=mats)
        gt = render_ground_truth(scene, cam)
        annset = compute_annotations(gt, scene)
        visible_total = 0
        for ann in annset.annotations:
            mask = rle_decode(ann.mask)
            if not np.array_equal(mask, gt.instance_map == ann.instance_id):
                problems.append(f"seed {seed}: mask mismatch "
                                f"(instance {ann.instance_id})")
            visible_total += ann.visible_pixels
            rows, cols = np.nonzero(mask)
            if rows.size == 0:
                if ann.bbox is not None:
                    problems.append(f"seed {seed}: empty mask with a bbox")
                continue
            tight = (int(cols.min()), int(rows.min()),
                     int(cols.max() - cols.min() + 1),
                     int(rows.max() - rows.min() + 1))
            if ann.bbox != tight:
                problems.append(f"seed {seed}: loose bbox {ann.bbox} "
                                f"vs {tight}")
        if visible_total != int((gt.instance_map > 0).sum()):
            problems.append(f"seed {seed}: visible pixel sum "
                            f"{visible_total} != instance pixel count")
        scenes_checked += 1

    out, _ = generated_runs["first"]
    manifest = json.loads((out / "manifest.json").read_text())
    for key in ("format_version", "dataset_name", "rig", "pattern_config",
                "render_settings", "scenes", "seed"):
        if key not in manifest:
            problems.append(f"manifest lacks {key}")
    for side in ("camera", "projector"):
        model = manifest.get("rig", {}).get(side, {})
        for field in ("fx", "fy", "cx", "cy", "width", "height",
                      "rotation", "translation"):
            if field not in model:
                problems.append(f"manifest rig.{side} lacks {field}")
    for entry_ in manifest.get("scenes", []):
        for field in ("name", "instance_count", "pattern_frames",
                      "resolution", "seed", "metrics"):
            if field not in entry_:
                problems.append(f"scene entry lacks {field}")
        if not (out / entry_.get("name", "?")).is_dir():
            problems.append(f"listed scene {entry_.get('name')} missing")
    problems.extend(validate_dataset(out))

    ok = not problems
    report(8, ok, f"dataset integrity: RLE exact on {exact}/1000 masks, "
                  f"bbox+conservation on {scenes_checked} scenes, manifest "
                  f"complete" + ("" if ok else f"; {problems[:4]}"))
    assert ok, problems


def test_criterion_9_scenegen_contracts():
    problems = []
    cube = box_mesh((0.1, 0.1, 0.1))
    try:
        ClutterConfig(mesh=cube, count=256, bin_inner_size=(0.8, 0.7, 0.15),
                      seed=0)
        problems.append("count 256 was accepted")
    except CapacityExceeded:
        pass

    bin_box = BinBox(inner_size=(0.8, 0.7, 0.15), wall_thickness=0.02)
    cell = 2.0 * cube.bounding_sphere_radius / 8.0
    half = np.array([0.05, 0.05, 0.05])
    worst_depth = 0.0
    for seed in range(50):
        cfg = ClutterConfig(mesh=cube, count=8,
                            bin_inner_size=(0.8, 0.7, 0.15), seed=seed,
                            drop_height=(0.0, 0.4))
        poses = settle(sample_poses(cfg), cube, bin_box, cell_size=cell)
        for i, pose in enumerate(poses):
            verts = cube.transformed_vertices(pose)
            if (np.abs(verts[:, 0]).max() > 0.4 + 1e-9
                    or np.abs(verts[:, 1]).max() > 0.35 + 1e-9):
                problems.append(f"seed {seed}: instance {i + 1} leaves "
                                f"the bin footprint")
            if verts[:, 2].min() < -1e-9:
                problems.append(f"seed {seed}: instance {i + 1} sinks "
                                f"below the floor")
            for j in range(i):
                depth = box_penetration_depth(pose, poses[j], half)
                worst_depth = max(worst_depth, depth)
                if depth > cell + 1e-9:
                    problems.append(
                        f"seed {seed}: instances {j + 1} and {i + 1} "
                        f"overlap by {depth:.4f} m")
    ok = not problems
    report(9, ok, f"scene generation: capacity cap enforced at 256; 50 "
                  f"seeded runs contained, max interpenetration "
                  f"{max(worst_depth, 0.0) * 1e3:.2f} mm <= cell "
                  f"{cell * 1e3:.2f} mm" + ("" if ok else f"; {problems[:4]}"))
    assert ok, problems
