"""Self-contained synthetic benchmark generation: random multi-level ground
truth scenes, ring camera rigs, and rendered image datasets with a 1-in-8
holdout split."""

import json
import os

import numpy as np

from . import imgproc
from .model import SH_C0, Camera, GaussianScene, inverse_sigmoid
from .render import RenderOptions, render_level


def make_scene(seed, n_per_level, num_levels, extent=1.0, background=0.5):
    """Deterministic random ground-truth scene.

    Level 1 carries large Gaussians with [0,1] colors; each higher level
    halves the base scale and uses signed residual colors in [-0.5, 0.5].
    """
    if num_levels < 1:
        raise ValueError("num_levels must be >= 1")
    if len(n_per_level) != num_levels:
        raise ValueError("n_per_level length must equal num_levels")
    rng = np.random.default_rng(seed)
    parts = {k: [] for k in ("pos", "quat", "ls", "op", "sh", "lvl")}
    for level, count in enumerate(n_per_level, start=1):
        if count == 0:
            continue
        # uniform in a ball of radius extent
        v = rng.standard_normal((count, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        r = extent * rng.random(count) ** (1 / 3)
        parts["pos"].append(v * r[:, None])

        q = rng.standard_normal((count, 4))
        parts["quat"].append(q / np.linalg.norm(q, axis=1, keepdims=True))

        base = extent / 10.0 / 2.0 ** (level - 1)
        parts["ls"].append(np.log(base) + rng.normal(0.0, 0.25, (count, 3)))

        parts["op"].append(inverse_sigmoid(rng.uniform(0.5, 0.95, count)))

        sh = np.zeros((count, 3, 4))
        if level == 1:
            target = rng.uniform(0.15, 0.85, (count, 3))
            sh[:, :, 0] = (target - 0.5) / SH_C0
        else:
            residual = rng.uniform(-0.5, 0.5, (count, 3))
            raw = (residual + 1.0) / 2.0
            sh[:, :, 0] = (raw - 0.5) / SH_C0
        sh[:, :, 1:] = rng.normal(0.0, 0.05, (count, 3, 3))
        parts["sh"].append(sh)
        parts["lvl"].append(np.full(count, level, dtype=np.int64))

    if not parts["pos"]:
        empty = np.zeros((0,))
        return GaussianScene(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)),
                             empty, np.zeros((0, 3, 4)), np.zeros(0, dtype=np.int64),
                             num_levels=num_levels,
                             background=np.full(3, background))
    return GaussianScene(
        np.concatenate(parts["pos"]), np.concatenate(parts["quat"]),
        np.concatenate(parts["ls"]), np.concatenate(parts["op"]),
        np.concatenate(parts["sh"]), np.concatenate(parts["lvl"]),
        num_levels=num_levels, background=np.full(3, background))


def init_scene(seed, count, num_levels, extent=1.0, background=0.5):
    """Random level-1 initialization for training (stands in for SfM points)."""
    scene = make_scene(seed, [count] + [0] * (num_levels - 1), num_levels,
                       extent=extent, background=background)
    out = scene.copy()
    out.num_levels = 1
    return out


def _look_at(position, target, up=(0.0, 1.0, 0.0)):
    forward = np.asarray(target, float) - np.asarray(position, float)
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, float))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    translation = -rotation @ np.asarray(position, float)
    return rotation, translation


def make_rig(seed, count, radius, target=(0.0, 0.0, 0.0), resolution=128,
             elevation=0.35):
    """Cameras on a ring of the given radius looking at the target."""
    if count < 2:
        raise ValueError("rig needs at least 2 cameras")
    rng = np.random.default_rng(seed)
    target = np.asarray(target, dtype=np.float64)
    cameras = []
    focal = 0.9 * resolution
    for i in range(count):
        angle = 2.0 * np.pi * i / count
        tilt = elevation * np.sin(angle * 3 + rng.uniform(0, 0.1))
        position = target + radius * np.array([
            np.cos(angle) * np.cos(tilt),
            np.sin(tilt),
            np.sin(angle) * np.cos(tilt)])
        rotation, translation = _look_at(position, target)
        cameras.append(Camera(resolution, resolution, focal, focal,
                              resolution / 2.0, resolution / 2.0,
                              rotation, translation, near=0.05))
    return cameras


def camera_to_dict(cam):
    return {"width": cam.width, "height": cam.height,
            "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
            "rotation": cam.rotation.reshape(-1).tolist(),
            "translation": cam.translation.tolist(), "near": cam.near}


def camera_from_dict(d):
    return Camera(d["width"], d["height"], d["fx"], d["fy"], d["cx"], d["cy"],
                  np.asarray(d["rotation"]).reshape(3, 3),
                  np.asarray(d["translation"]), d["near"])


def render_dataset(scene, cameras, out_dir, seed=0, extent=1.0,
                   scene_path=None, options=None):
    """Render the full-level image for each camera and write PNGs + manifest.

    Every eighth camera goes to the holdout split.
    """
    os.makedirs(out_dir, exist_ok=True)
    options = options or RenderOptions()
    images = []
    for i, cam in enumerate(cameras):
        img = render_level(scene, cam, scene.num_levels, options)
        name = f"view_{i:03d}.png"
        imgproc.save_png(img, os.path.join(out_dir, name))
        images.append({"path": name, "camera": camera_to_dict(cam),
                       "split": "holdout" if i % 8 == 0 else "train"})
    manifest = {
        "seed": seed,
        "scene": scene_path,
        "levels": scene.num_levels,
        "extent": extent,
        "background": scene.background.tolist(),
        "resolution": [cameras[0].width, cameras[0].height] if cameras else [0, 0],
        "images": images,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def load_dataset(manifest_path):
    """Manifest + decoded images as (train_pairs, holdout_pairs, manifest)."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    train, holdout = [], []
    for entry in manifest["images"]:
        cam = camera_from_dict(entry["camera"])
        img = imgproc.load_png(os.path.join(base, entry["path"]))
        (holdout if entry["split"] == "holdout" else train).append((cam, img))
    return train, holdout, manifest
