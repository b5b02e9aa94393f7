import json

import numpy as np
import pytest

from freqsplat import imgproc, synth
from freqsplat.model import level_counts
from freqsplat.render import RenderOptions, render_level

NP_OPT = RenderOptions(backend="numpy")


def test_make_scene_deterministic():
    a = synth.make_scene(42, [10, 5], 2)
    b = synth.make_scene(42, [10, 5], 2)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.sh_coeffs, b.sh_coeffs)
    c = synth.make_scene(43, [10, 5], 2)
    assert not np.array_equal(a.positions, c.positions)


def test_make_scene_counts_and_levels():
    scene = synth.make_scene(1, [8, 4, 2], 3)
    assert scene.count == 14
    assert level_counts(scene) == [8, 4, 2]
    assert scene.num_levels == 3


def test_make_scene_positions_within_extent():
    scene = synth.make_scene(2, [50], 1, extent=0.7)
    assert np.all(np.linalg.norm(scene.positions, axis=1) <= 0.7 + 1e-12)


def test_make_scene_scale_halves_per_level():
    scene = synth.make_scene(3, [200, 200, 200], 3, extent=1.0)
    means = [np.exp(scene.log_scales[scene.levels == l]).mean()
             for l in (1, 2, 3)]
    assert means[0] > means[1] > means[2]
    assert means[0] / means[1] == pytest.approx(2.0, rel=0.2)
    assert means[1] / means[2] == pytest.approx(2.0, rel=0.2)


def test_make_scene_color_ranges():
    from freqsplat.model import SH_C0, eval_color
    scene = synth.make_scene(4, [100, 100], 2)
    d = np.array([0.0, 0.0, 1.0])
    lvl1 = scene.levels == 1
    raw1 = 0.5 + SH_C0 * scene.sh_coeffs[lvl1, :, 0]
    assert raw1.min() >= 0.15 - 1e-9 and raw1.max() <= 0.85 + 1e-9
    res = 2 * (0.5 + SH_C0 * scene.sh_coeffs[~lvl1, :, 0]) - 1
    assert res.min() >= -0.5 - 1e-9 and res.max() <= 0.5 + 1e-9
    assert np.all(scene.opacities >= 0.5 - 1e-9)


def test_make_scene_validation():
    with pytest.raises(ValueError):
        synth.make_scene(0, [1, 2], 3)
    with pytest.raises(ValueError):
        synth.make_scene(0, [], 0)


def test_init_scene_single_level():
    scene = synth.init_scene(7, 30, 3)
    assert scene.count == 30
    assert scene.num_levels == 1
    assert np.all(scene.levels == 1)


def test_make_rig_geometry():
    cams = synth.make_rig(5, 12, 3.0, resolution=64)
    assert len(cams) == 12
    for cam in cams:
        assert (cam.width, cam.height) == (64, 64)
        assert np.isclose(np.linalg.norm(cam.center), 3.0)
        # optical axis points at the target (origin)
        fwd = cam.rotation[2]
        to_target = -cam.center / np.linalg.norm(cam.center)
        assert np.allclose(fwd, to_target, atol=1e-9)
    with pytest.raises(ValueError):
        synth.make_rig(5, 1, 3.0)


def test_camera_dict_roundtrip():
    cam = synth.make_rig(5, 4, 2.0, resolution=32)[1]
    back = synth.camera_from_dict(synth.camera_to_dict(cam))
    assert np.allclose(back.rotation, cam.rotation)
    assert np.allclose(back.translation, cam.translation)
    assert (back.fx, back.cy, back.near) == (cam.fx, cam.cy, cam.near)


def test_render_dataset_split_and_roundtrip(tmp_path):
    scene = synth.make_scene(42, [20, 10], 2, extent=0.8)
    cams = synth.make_rig(42, 16, 2.5, resolution=32)
    manifest = synth.render_dataset(scene, cams, str(tmp_path), seed=42,
                                    extent=0.8, options=NP_OPT)
    splits = [e["split"] for e in manifest["images"]]
    assert splits.count("holdout") == 2       # cameras 0 and 8 of 16
    assert splits.count("train") == 14
    assert splits[0] == "holdout" and splits[8] == "holdout"

    train_pairs, holdout_pairs, mf = synth.load_dataset(str(tmp_path / "manifest.json"))
    assert len(train_pairs) == 14 and len(holdout_pairs) == 2
    assert mf["seed"] == 42 and mf["levels"] == 2
    assert mf["resolution"] == [32, 32]

    # loading the 8-bit PNG reproduces the render up to quantization;
    # PSNR of the decoded image against its own re-save is infinite
    cam, img = train_pairs[0]
    entry = next(e for e in manifest["images"] if e["split"] == "train")
    rendered = render_level(scene, synth.camera_from_dict(entry["camera"]),
                            2, NP_OPT)
    assert np.max(np.abs(img - rendered)) <= 0.5 / 255 + 1e-12
    imgproc.save_png(img, str(tmp_path / "resave.png"))
    again = imgproc.load_png(str(tmp_path / "resave.png"))
    assert imgproc.psnr(img, again) == float("inf")


def test_manifest_is_valid_json(tmp_path):
    scene = synth.make_scene(1, [5], 1)
    cams = synth.make_rig(1, 3, 2.0, resolution=16)
    synth.render_dataset(scene, cams, str(tmp_path), options=NP_OPT)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert {"seed", "levels", "extent", "background", "resolution", "images"} <= set(doc)
    cam = doc["images"][0]["camera"]
    assert len(cam["rotation"]) == 9
