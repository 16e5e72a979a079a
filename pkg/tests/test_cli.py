"""Command-line interface: subcommands, exit codes, and artifact layout.

Everything runs in-process through entry() so coverage and debuggers see it;
stdout JSON summaries are parsed with capsys.
"""

import json

import numpy as np
import pytest

from slsim import save_rig
from slsim.cli import entry
from slsim.config import load_pipeline_config
from slsim.imageio import load_gray_png, load_pfm, load_png16, save_pfm

TINY_CONFIG = {
    "version": 1,
    "dataset_name": "clitest",
    "seed": 11,
    "scene_count": 1,
    "scene": {
        "mesh": {"primitive": "box", "size": [0.05, 0.04, 0.03]},
        "count": 2,
        "bin_inner_size": [0.3, 0.3, 0.08],
        "drop_height": [0.0, 0.2],
        "material": {"albedo": [0.7, 0.7, 0.7]},
        "ambient_light": [0.01, 0.01, 0.01],
    },
    "rig": {
        "camera": {"fx": 90, "fy": 90, "cx": 19.5, "cy": 19.5,
                   "width": 40, "height": 40,
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
def dataset(tmp_path_factory):
    """One tiny generated dataset shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("clids")
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    out = root / "ds"
    assert entry(["generate", "--config", str(config),
                  "--out", str(out)]) == 0
    return config, out


def read_summary(capsys):
    return json.loads(capsys.readouterr().out)


def test_help_and_version():
    with pytest.raises(SystemExit) as exc:
        entry(["--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        entry(["generate", "--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        entry(["--version"])
    assert exc.value.code == 0


def test_patterns_writes_stack(tmp_path, capsys):
    out = tmp_path / "pat"
    assert entry(["patterns", "--columns", "64", "--raster", "64x48",
                  "--out", str(out)]) == 0
    summary = read_summary(capsys)
    assert summary["frames"] == 8 and summary["bit_count"] == 6
    names = sorted(p.name for p in out.iterdir())
    assert names == [f"pattern_{i:02d}.png" for i in range(8)]
    frame = load_gray_png(out / "pattern_02.png")
    assert frame.shape == (48, 64)
    assert set(np.unique(frame)) <= {0.0, 1.0}


def test_patterns_full_projector_raster(tmp_path, capsys):
    out = tmp_path / "pat"
    assert entry(["patterns", "--columns", "1024", "--raster", "1024x768",
                  "--out", str(out)]) == 0
    summary = read_summary(capsys)
    assert summary["frames"] == 12 and summary["bit_count"] == 10
    names = sorted(p.name for p in out.iterdir())
    assert names == [f"pattern_{i:02d}.png" for i in range(12)]
    assert load_gray_png(out / "pattern_11.png").shape == (768, 1024)


def test_patterns_bit_override_and_bad_raster(tmp_path):
    out = tmp_path / "pat"
    assert entry(["patterns", "--columns", "64", "--bits", "8",
                  "--raster", "64x8", "--out", str(out)]) == 0
    assert len(list(out.iterdir())) == 10
    assert entry(["patterns", "--columns", "64", "--raster", "64",
                  "--out", str(out)]) == 1
    assert entry(["patterns", "--columns", "0", "--raster", "4x4",
                  "--out", str(out)]) == 1


def test_generate_layout_and_summary(dataset, capsys):
    config, out = dataset
    capsys.readouterr()
    assert (out / "manifest.json").is_file()
    scene = out / "scene_000000"
    for f in ("rgb.png", "depth_gt.pfm", "depth_recon.pfm", "instance.png",
              "annotations.json"):
        assert (scene / f).is_file()
    assert len(list((scene / "patterns").iterdir())) == 7  # white+black+5 bits
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 11
    assert [e["name"] for e in manifest["scenes"]] == ["scene_000000"]
    assert manifest["scenes"][0]["metrics"]["valid_ratio"] > 0


def test_validate_dataset_passes(dataset, capsys):
    _, out = dataset
    assert entry(["validate", str(out)]) == 0
    summary = read_summary(capsys)
    assert summary["ok"] is True and summary["problems"] == []
    assert summary["metrics"]["scene_000000"]["valid_ratio"] > 0


def test_validate_bare_scene_with_rig(dataset, tmp_path, capsys):
    config, out = dataset
    cfg = load_pipeline_config(config)
    rig = tmp_path / "rig.json"
    save_rig(rig, cfg.camera, cfg.projector)
    assert entry(["validate", str(out / "scene_000000"),
                  "--rig", str(rig)]) == 0
    summary = read_summary(capsys)
    assert summary["metrics"]["scene_000000"]["valid_ratio"] > 0


def test_validate_fails_on_zeroed_reconstruction(dataset, tmp_path, capsys):
    config, out = dataset
    tampered = tmp_path / "tampered"
    import shutil
    shutil.copytree(out, tampered)
    pfm = tampered / "scene_000000" / "depth_recon.pfm"
    save_pfm(pfm, np.zeros_like(load_pfm(pfm)))
    assert entry(["validate", str(tampered)]) == 2
    summary = read_summary(capsys)
    assert summary["ok"] is False
    assert any("valid_ratio=0" in p for p in summary["problems"])


def test_reconstruct_from_frames(dataset, tmp_path, capsys):
    config, out = dataset
    cfg = load_pipeline_config(config)
    rig = tmp_path / "rig.json"
    save_rig(rig, cfg.camera, cfg.projector)
    decode = tmp_path / "decode.json"
    decode.write_text(json.dumps({"column_count": 32, "min_contrast": 0.01}))
    depth_out = tmp_path / "depth.pfm"
    corr_out = tmp_path / "corr.png"
    assert entry(["reconstruct",
                  "--frames", str(out / "scene_000000" / "patterns"),
                  "--rig", str(rig), "--config", str(decode),
                  "--out", str(depth_out),
                  "--correspondence", str(corr_out)]) == 0
    summary = read_summary(capsys)
    assert summary["valid_ratio"] > 0
    depth = load_pfm(depth_out)
    assert depth.shape == (40, 40)
    corr = load_png16(corr_out)
    assert corr.shape == (40, 40)
    # frames on disk are 8-bit quantized, so allow decode differences at
    # pixels near the binarization threshold, but most must agree
    stored = load_pfm(out / "scene_000000" / "depth_recon.pfm")
    both = (depth > 0) & (stored > 0)
    assert both.mean() > 0.5
    assert np.isclose(depth[both], stored[both], atol=1e-3).mean() > 0.95


def test_reconstruct_rejects_frame_gap(dataset, tmp_path):
    config, out = dataset
    import shutil
    frames = tmp_path / "frames"
    shutil.copytree(out / "scene_000000" / "patterns", frames)
    (frames / "pattern_03.png").unlink()
    cfg = load_pipeline_config(config)
    rig = tmp_path / "rig.json"
    save_rig(rig, cfg.camera, cfg.projector)
    decode = tmp_path / "decode.json"
    decode.write_text(json.dumps({"column_count": 32}))
    assert entry(["reconstruct", "--frames", str(frames), "--rig", str(rig),
                  "--config", str(decode),
                  "--out", str(tmp_path / "d.pfm")]) == 1


def test_info(dataset, capsys):
    config, _ = dataset
    assert entry(["info"]) == 0
    summary = read_summary(capsys)
    assert "version" in summary
    assert summary["defaults"]["max_code_bits"] == 16
    assert entry(["info", "--config", str(config)]) == 0
    summary = read_summary(capsys)
    assert summary["config"]["dataset_name"] == "clitest"
    assert summary["config"]["pattern"]["column_count"] == 32


def test_exit_codes(tmp_path):
    # missing file -> I/O
    assert entry(["generate", "--config", str(tmp_path / "nope.json"),
                  "--out", str(tmp_path / "o")]) == 3
    assert entry(["validate", str(tmp_path / "missing")]) == 3
    # malformed config -> config error
    bad = tmp_path / "bad.json"
    data = dict(TINY_CONFIG)
    data["surprise"] = 1
    bad.write_text(json.dumps(data))
    assert entry(["generate", "--config", str(bad),
                  "--out", str(tmp_path / "o")]) == 1
    # capacity violation -> geometry error
    over = json.loads(json.dumps(TINY_CONFIG))
    over["scene"]["count"] = 256
    full = tmp_path / "over.json"
    full.write_text(json.dumps(over))
    assert entry(["generate", "--config", str(full),
                  "--out", str(tmp_path / "o")]) == 2
