"""End-to-end subcommand round trips through the console entry point."""

import csv
import json
import os

import numpy as np
import pytest

from freqsplat import cli, imgproc
from freqsplat.model import level_counts, load_model


def run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    code = cli.main(["synth", "--out", str(out), "--seed", "5",
                     "--levels", "2", "--n-per-level", "12,6",
                     "--cameras", "6", "--resolution", "32"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["train", "--manifest", str(dataset / "manifest.json"),
                     "--out", str(out), "--init-count", "12",
                     "--levels", "2", "--steps-per-level", "12",
                     "--total-steps", "26", "--eval-interval", "10",
                     "--densify-interval", "10", "--densify-start", "10",
                     "--densify-stop", "20", "--refine-pause", "2"])
    assert code == 0
    return out


def test_synth_writes_dataset(dataset):
    assert (dataset / "gt_scene.fags").exists()
    doc = json.loads((dataset / "manifest.json").read_text())
    assert doc["scene"] == "gt_scene.fags"
    assert len(doc["images"]) == 6
    assert all((dataset / e["path"]).exists() for e in doc["images"])


def test_synth_prints_resolved_config(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--out", str(tmp_path / "d"),
                       "--levels", "1", "--n-per-level", "4",
                       "--cameras", "3", "--resolution", "16")
    assert code == 0
    lines = [l for l in out.splitlines() if l.startswith("# ")]
    assert any("seed = 0" in l for l in lines)
    assert any("resolution = 16" in l for l in lines)


def test_synth_bad_input_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "synth", "--out", str(tmp_path / "d"),
                       "--levels", "2", "--n-per-level", "4",
                       "--cameras", "3", "--resolution", "16")
    assert code == 1
    assert err.startswith("error:") and "\n" not in err.strip()
    code, _, err = run(capsys, "synth", "--out", str(tmp_path / "d"),
                       "--levels", "3", "--n-per-level", "4,2,1",
                       "--cameras", "3", "--resolution", "30")
    assert code == 1


def test_train_outputs(trained):
    scene = load_model(str(trained / "model.fags"))
    assert scene.num_levels == 2
    with open(trained / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["step", "loss", "loss_im", "loss_dft",
                             "n_gaussians", "n_level_1", "n_level_2",
                             "psnr_holdout"]
    assert len(rows) == 26
    # introduction at step 12 doubles the count
    assert int(rows[12]["n_gaussians"]) == 2 * int(rows[11]["n_gaussians"])


def test_train_flag_overrides_config_file(capsys, dataset, tmp_path):
    cfg = tmp_path / "cfg.txt"
    cfg.write_text("levels = 2\nsteps_per_level = 12\ntotal_steps = 14\n"
                   "seed = 9\neval_interval = 0\n")
    code, out, _ = run(capsys, "train",
                       "--manifest", str(dataset / "manifest.json"),
                       "--out", str(tmp_path / "o"), "--init-count", "8",
                       "--config", str(cfg), "--seed", "11")
    assert code == 0
    assert "# seed = 11" in out          # flag beats file
    assert "# total_steps = 14" in out   # file beats default


def test_train_missing_manifest_exit_code(capsys, tmp_path):
    code, _, err = run(capsys, "train", "--manifest",
                       str(tmp_path / "nope.json"), "--out", str(tmp_path))
    assert code == 1
    assert err.startswith("error:")


def test_render_roundtrip_and_determinism(capsys, dataset, trained, tmp_path):
    a = tmp_path / "a.png"
    b = tmp_path / "b.png"
    for target in (a, b):
        code, _, _ = run(capsys, "render", "--model",
                         str(trained / "model.fags"),
                         "--manifest", str(dataset / "manifest.json"),
                         "--camera-index", "1", "--out", str(target),
                         "--deterministic")
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    img = imgproc.load_png(str(a))
    assert img.shape == (32, 32, 3)


def test_render_level_flag(capsys, dataset, trained, tmp_path):
    full = tmp_path / "full.png"
    lvl1 = tmp_path / "l1.png"
    run(capsys, "render", "--model", str(trained / "model.fags"),
        "--manifest", str(dataset / "manifest.json"), "--out", str(full))
    run(capsys, "render", "--model", str(trained / "model.fags"),
        "--manifest", str(dataset / "manifest.json"), "--level", "1",
        "--out", str(lvl1))
    assert full.read_bytes() != lvl1.read_bytes()


def test_render_bad_camera_index(capsys, dataset, trained, tmp_path):
    code, _, err = run(capsys, "render", "--model",
                       str(trained / "model.fags"),
                       "--manifest", str(dataset / "manifest.json"),
                       "--camera-index", "99", "--out", str(tmp_path / "x.png"))
    assert code == 1
    assert "out of range" in err


def test_eval_identity_model_is_near_lossless(capsys, dataset, tmp_path):
    """Evaluating the generating scene against its own renders: PSNR is
    bounded only by 8-bit quantization of the stored images."""
    out = tmp_path / "ev"
    code, text, _ = run(capsys, "eval", "--model",
                        str(dataset / "gt_scene.fags"),
                        "--manifest", str(dataset / "manifest.json"),
                        "--out", str(out))
    assert code == 0
    with open(out / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["level"] for r in rows] == ["1", "2"]
    assert float(rows[-1]["psnr_vs_gt"]) >= 50.0
    assert "psnr_vs_gt" in text or "psnr" in text  # human-readable table


def test_eval_reports_per_level_counts(capsys, dataset, trained, tmp_path):
    out = tmp_path / "ev"
    code, text, _ = run(capsys, "eval", "--model", str(trained / "model.fags"),
                        "--manifest", str(dataset / "manifest.json"),
                        "--out", str(out))
    assert code == 0
    scene = load_model(str(trained / "model.fags"))
    with open(out / "eval.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert int(rows[-1]["n_gaussians"]) == scene.count
    assert str(level_counts(scene)) in text


def test_fovea_roundtrip(capsys, dataset, trained, tmp_path):
    out = tmp_path / "fov.fags"
    code, text, _ = run(capsys, "fovea", "--model",
                        str(trained / "model.fags"),
                        "--manifest", str(dataset / "manifest.json"),
                        "--gaze", "16,16", "--tau", "0.3", "--out", str(out))
    assert code == 0
    src = load_model(str(trained / "model.fags"))
    fov = load_model(str(out))
    assert fov.count <= src.count
    assert np.sum(fov.levels == 1) == np.sum(src.levels == 1)


def test_focus_roundtrip(capsys, dataset, trained, tmp_path):
    masks = tmp_path / "masks"
    masks.mkdir()
    doc = json.loads((dataset / "manifest.json").read_text())
    for entry in doc["images"][:3]:
        imgproc.save_png(np.ones((32, 32, 3)), str(masks / entry["path"]))
    out = tmp_path / "focus.fags"
    code, text, _ = run(capsys, "focus", "--model",
                        str(trained / "model.fags"),
                        "--manifest", str(dataset / "manifest.json"),
                        "--masks", str(masks), "--out", str(out))
    assert code == 0
    assert "3 mask views" in text
    assert load_model(str(out)).count <= load_model(
        str(trained / "model.fags")).count


def test_focus_no_masks_exit_code(capsys, dataset, trained, tmp_path):
    empty = tmp_path / "none"
    empty.mkdir()
    code, _, err = run(capsys, "focus", "--model",
                       str(trained / "model.fags"),
                       "--manifest", str(dataset / "manifest.json"),
                       "--masks", str(empty), "--out", str(tmp_path / "o.fags"))
    assert code == 1


def test_filter_preset_and_recipe(capsys, dataset, trained, tmp_path):
    out = tmp_path / "sharp.fags"
    code, _, _ = run(capsys, "filter", "--model", str(trained / "model.fags"),
                     "--preset", "sharp", "--out", str(out))
    assert code == 0
    filtered = load_model(str(out))
    assert not np.any(filtered.levels == 2)

    recipe = tmp_path / "r.json"
    recipe.write_text(json.dumps(
        {"levels": {"1": {"opacity": 0.5}, "2": {"drop": True}}}))
    out2 = tmp_path / "rec.fags"
    code, _, _ = run(capsys, "filter", "--model", str(trained / "model.fags"),
                     "--recipe", str(recipe), "--out", str(out2))
    assert code == 0
    assert not np.any(load_model(str(out2)).levels == 2)


def test_export_viewer_bundle(capsys, dataset, trained, tmp_path):
    out = tmp_path / "viewer"
    code, _, _ = run(capsys, "export-viewer", "--model",
                     str(trained / "model.fags"),
                     "--manifest", str(dataset / "manifest.json"),
                     "--out", str(out), "--dump-json")
    assert code == 0
    index = json.loads((out / "index.json").read_text())
    scene = load_model(str(trained / "model.fags"))
    assert index["count"] == scene.count
    assert index["counts_per_level"] == level_counts(scene)
    assert (out / "model.fags").read_bytes() == (
        trained / "model.fags").read_bytes()
    dump = json.loads((out / "model.json").read_text())
    assert dump["count"] == scene.count
    assert len(dump["positions"]) == 3 * scene.count
    assert dump["level_tags"] == scene.levels.tolist()
    json.loads((out / "manifest.json").read_text())
