"""Frequency-driven scene transforms: foveated pruning, mask-voted focus,
artistic filter recipes, and the low-frequency geometry query."""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .model import SH_C0, inverse_sigmoid, level_subset, sigmoid


@dataclass
class FoveaSpec:
    """Gaze point plus a strictly decreasing per-level filter width."""
    gaze: tuple                 # (x, y) pixels
    sigmas: list                # one sigma per level, decreasing
    tau: float = 0.01

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise ValueError("tau must be in (0, 1)")
        sig = list(self.sigmas)
        if any(s <= 0 for s in sig):
            raise ValueError("sigmas must be positive")
        if any(b >= a for a, b in zip(sig, sig[1:])):
            raise ValueError("sigmas must be strictly decreasing per level")

    @staticmethod
    def default(camera, gaze=None, tau=0.01, num_levels=1):
        diag = float(np.hypot(camera.width, camera.height))
        gaze = gaze if gaze is not None else (camera.width / 2, camera.height / 2)
        sigmas = [diag / 2 / 2 ** (l - 1) for l in range(1, num_levels + 1)]
        return FoveaSpec(gaze, sigmas, tau)


def _project_centers(scene, camera):
    """Screen positions of Gaussian centers; valid = in front of near plane."""
    p_cam = scene.positions @ camera.rotation.T + camera.translation
    valid = p_cam[:, 2] > camera.near
    z = np.where(valid, p_cam[:, 2], 1.0)
    uv = np.stack([camera.fx * p_cam[:, 0] / z + camera.cx,
                   camera.fy * p_cam[:, 1] / z + camera.cy], axis=1)
    return uv, valid


def foveate(scene, camera, spec):
    """Keep Gaussians whose gaze-weighted opacity clears the threshold.

    Level-1 Gaussians are always kept (structural base). Survivors keep
    their original parameters; the weights only select.
    """
    if len(spec.sigmas) < scene.num_levels:
        raise ValueError("spec needs a sigma for every level")
    uv, valid = _project_centers(scene, camera)
    gaze = np.asarray(spec.gaze, dtype=np.float64)
    sigmas = np.asarray(spec.sigmas)[scene.levels - 1]
    d2 = np.sum((uv - gaze) ** 2, axis=1)
    weights = np.where(valid, np.exp(-d2 / (2.0 * sigmas ** 2)), 0.0)
    keep = (scene.levels == 1) | (scene.opacities * weights >= spec.tau)
    return scene.take(np.nonzero(keep)[0])


def focus(scene, cameras, masks, ratio_threshold=0.6):
    """Mask-voted promptable focus.

    Per Gaussian, the overlap ratio counts views whose binary mask is true
    at the projected center, over views where the center lands in-frame.
    Base-level Gaussians are always kept.
    """
    if len(cameras) != len(masks):
        raise ValueError("need one mask per camera")
    hits = np.zeros(scene.count)
    seen = np.zeros(scene.count)
    for camera, mask in zip(cameras, masks):
        mask = np.asarray(mask)
        if mask.shape[0] != camera.height or mask.shape[1] != camera.width:
            raise ValueError(
                f"mask shape {mask.shape[:2]} != camera {camera.height}x{camera.width}")
        uv, valid = _project_centers(scene, camera)
        ix = np.floor(uv[:, 0]).astype(int)
        iy = np.floor(uv[:, 1]).astype(int)
        inside = (valid & (ix >= 0) & (ix < camera.width)
                  & (iy >= 0) & (iy < camera.height))
        seen += inside
        sel = np.nonzero(inside)[0]
        hits[sel] += mask[iy[sel], ix[sel]] != 0
    ratio = np.where(seen > 0, hits / np.maximum(seen, 1), 0.0)
    keep = (scene.levels == 1) | ((seen > 0) & (ratio >= ratio_threshold))
    return scene.take(np.nonzero(keep)[0])


@dataclass
class LevelTransform:
    color_scale: tuple = (1.0, 1.0, 1.0)
    color_offset: tuple = (0.0, 0.0, 0.0)
    opacity: float | None = None
    jitter_sigma: float = 0.0
    drop: bool = False


@dataclass
class FilterRecipe:
    transforms: dict = field(default_factory=dict)  # level -> LevelTransform

    def validate(self, num_levels):
        for level in self.transforms:
            if not (1 <= level <= num_levels):
                raise ValueError(f"recipe references level {level}, scene has {num_levels}")

    @staticmethod
    def from_json(path):
        with open(path) as fh:
            doc = json.load(fh)
        transforms = {}
        for key, spec in doc.get("levels", {}).items():
            transforms[int(key)] = LevelTransform(
                color_scale=tuple(spec.get("color_scale", (1, 1, 1))),
                color_offset=tuple(spec.get("color_offset", (0, 0, 0))),
                opacity=spec.get("opacity"),
                jitter_sigma=spec.get("jitter_sigma", 0.0),
                drop=spec.get("drop", False))
        return FilterRecipe(transforms)

    def to_json(self, path):
        doc = {"levels": {
            str(level): {"color_scale": list(t.color_scale),
                         "color_offset": list(t.color_offset),
                         "opacity": t.opacity,
                         "jitter_sigma": t.jitter_sigma,
                         "drop": t.drop}
            for level, t in self.transforms.items()}}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)


def apply_recipe(scene, recipe, seed=0):
    """Per-level color/opacity/jitter/drop transforms in native color space.

    The affine color map acts on the level's rendered color range: raw
    [0,1] space for level 1, signed residual space for levels >= 2.
    """
    recipe.validate(scene.num_levels)
    rng = np.random.default_rng(seed)
    out = scene.copy()
    keep = np.ones(scene.count, dtype=bool)
    for level in sorted(recipe.transforms):
        t = recipe.transforms[level]
        sel = out.levels == level
        if not np.any(sel):
            continue
        if t.drop:
            keep &= ~sel
            continue
        scale = np.asarray(t.color_scale, dtype=np.float64)
        offset = np.asarray(t.color_offset, dtype=np.float64)
        # native color c = raw (level 1) or 2*raw - 1 (residual levels);
        # c' = scale*c + offset translated back to raw-space SH terms
        if level == 1:
            bias = offset
        else:
            bias = (offset + 1.0 - scale) / 2.0
        sh = out.sh_coeffs[sel]
        raw_dc = 0.5 + SH_C0 * sh[:, :, 0]
        sh[:, :, 0] = (scale * raw_dc + bias - 0.5) / SH_C0
        if sh.shape[2] > 1:
            sh[:, :, 1:] = sh[:, :, 1:] * scale[None, :, None]
        out.sh_coeffs[sel] = sh
        if t.opacity is not None:
            out.opacity_logits[sel] = inverse_sigmoid(
                np.clip(t.opacity, 1e-4, 1.0 - 1e-4))
        if t.jitter_sigma > 0:
            out.positions[sel] = out.positions[sel] + rng.normal(
                0.0, t.jitter_sigma, (int(np.sum(sel)), 3))
    return out.take(np.nonzero(keep)[0])


def make_preset(name, scene, jitter_sigma=None):
    """Named artistic recipes, restricted to levels the scene actually has."""
    levels = scene.num_levels
    jitter = jitter_sigma if jitter_sigma is not None else 0.01 * scene.extent()
    transforms = {}

    def want(level):
        return level <= levels

    if name == "brush":
        for level in (2, 4):
            if want(level):
                transforms[level] = LevelTransform(
                    color_offset=(0.2, 0.2, 0.2), jitter_sigma=jitter)
        for level in (3, 5):
            if want(level):
                transforms[level] = LevelTransform(
                    color_offset=(-0.2, -0.2, -0.2), jitter_sigma=jitter)
    elif name == "xray":
        dark_blue = (0.05, 0.05, 0.25)
        for level in (1, 2):
            if want(level):
                transforms[level] = LevelTransform(
                    color_scale=(0.0, 0.0, 0.0), color_offset=dark_blue)
        if want(3):
            transforms[3] = LevelTransform(color_offset=(0.1, 0.1, 0.1))
        for level in (4, 5):
            if want(level):
                transforms[level] = LevelTransform(color_offset=(0.25, 0.25, 0.25))
    elif name == "sharp":
        if want(2):
            transforms[2] = LevelTransform(drop=True)
        for level in (3, 4, 5):
            if want(level):
                transforms[level] = LevelTransform(opacity=1.0)
        if want(5):
            transforms[5] = LevelTransform(opacity=1.0,
                                           color_offset=(-0.1, -0.1, -0.1))
    else:
        raise ValueError(f"unknown preset {name!r}")
    return FilterRecipe(transforms)


def geom_query(scene, k, queries):
    """Nearest-neighbor distances from a k-d tree over the level <= k subset."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.size == 0:
        raise ValueError("queries must be non-empty")
    subset = level_subset(scene, k)
    if subset.count == 0:
        raise ValueError(f"no Gaussians at level <= {k}")
    tree = cKDTree(subset.positions)
    distances, _ = tree.query(queries)
    return np.atleast_1d(distances), subset.count, scene.count
