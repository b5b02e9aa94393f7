"""Command-line entry point: dataset synthesis, training, rendering,
evaluation, and the application transforms, as reproducible runs."""

import argparse
import csv
import dataclasses
import json
import os
import shutil
import sys

import numpy as np

from . import apps, imgproc, synth
from .model import level_counts, level_subset, load_model, save_model
from .render import RenderOptions, render_level
from .render import backend as render_backend
from .train import TrainConfig, Trainer, load_config, write_metrics_csv


def _print_resolved(name, values):
    print(f"# {name} resolved configuration")
    for key in sorted(values):
        print(f"# {key} = {values[key]}")


def _render_options(args, cfg=None):
    if cfg is not None:
        opts = cfg.render_options()
    else:
        opts = RenderOptions()
    if getattr(args, "deterministic", False):
        opts.backend = render_backend.backend_name()
    return opts


def cmd_synth(args):
    counts = [int(x) for x in args.n_per_level.split(",")]
    if len(counts) != args.levels:
        raise ValueError("n-per-level must list one count per level")
    if args.resolution % (2 ** (args.levels - 1)) != 0:
        raise ValueError("resolution must be divisible by 2^(levels-1)")
    _print_resolved("synth", vars(args))
    scene = synth.make_scene(args.seed, counts, args.levels,
                             extent=args.extent, background=args.background)
    cameras = synth.make_rig(args.seed, args.cameras, 3.0 * args.extent,
                             resolution=args.resolution)
    os.makedirs(args.out, exist_ok=True)
    scene_path = os.path.join(args.out, "gt_scene.fags")
    save_model(scene, scene_path)
    synth.render_dataset(scene, cameras, args.out, seed=args.seed,
                         extent=args.extent, scene_path="gt_scene.fags")
    print(f"wrote dataset with {len(cameras)} views to {args.out}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    for f in dataclasses.fields(TrainConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            setattr(cfg, f.name, flag)
    cfg.__post_init__()
    _print_resolved("train", dataclasses.asdict(cfg))

    train_views, holdout, manifest = synth.load_dataset(args.manifest)
    extent = manifest.get("extent", 1.0)
    res = manifest["resolution"][0]
    if res % (2 ** (cfg.levels - 1)) != 0:
        raise ValueError("dataset resolution not divisible by 2^(levels-1)")
    scene = synth.init_scene(cfg.seed, args.init_count, cfg.levels,
                             extent=extent,
                             background=manifest.get("background", [0.5] * 3)[0])
    scene.background = np.asarray(manifest.get("background", [0.5] * 3))
    trainer = Trainer(scene, train_views, holdout, cfg, extent=extent)

    report_every = max(1, cfg.total_steps // 20)

    def progress(state, scene):
        if state.step % report_every == 0:
            rec = state.metrics[-1]
            print(f"step {rec['step']:6d}  loss {rec['loss']:.5f}  "
                  f"n {rec['n_gaussians']}  psnr {rec['psnr_holdout']}")

    trainer.run(progress=progress)
    os.makedirs(args.out, exist_ok=True)
    save_model(trainer.scene, os.path.join(args.out, "model.fags"))
    write_metrics_csv(trainer.state.metrics, cfg.levels,
                      os.path.join(args.out, "metrics.csv"))
    print(f"trained model with {trainer.scene.count} Gaussians -> {args.out}")
    return 0


def cmd_render(args):
    _print_resolved("render", vars(args))
    scene = load_model(args.model)
    _, holdout, manifest = synth.load_dataset(args.manifest)
    cameras = [synth.camera_from_dict(e["camera"]) for e in manifest["images"]]
    if not (0 <= args.camera_index < len(cameras)):
        raise ValueError(f"camera index {args.camera_index} out of range")
    k = args.level or scene.num_levels
    img = render_level(scene, cameras[args.camera_index], k, _render_options(args))
    imgproc.save_png(img, args.out)
    print(f"rendered level {k} of view {args.camera_index} -> {args.out}")
    return 0


def cmd_eval(args):
    _print_resolved("eval", vars(args))
    scene = load_model(args.model)
    _, holdout, manifest = synth.load_dataset(args.manifest)
    opts = _render_options(args)
    rows = []
    for k in range(1, scene.num_levels + 1):
        psnr_full, ssim_full, psnr_band = [], [], []
        for cam, gt in holdout:
            img = render_level(scene, cam, k, opts)
            psnr_full.append(imgproc.psnr(gt, img))
            ssim_full.append(imgproc.ssim(gt, img))
            band_gt = imgproc.lowpass_gt(gt, scene.num_levels, k)
            psnr_band.append(imgproc.psnr(band_gt, img))
        rows.append({
            "level": k,
            "psnr_vs_gt": float(np.mean(psnr_full)),
            "ssim_vs_gt": float(np.mean(ssim_full)),
            "psnr_vs_lowpass_gt": float(np.mean(psnr_band)),
            "n_gaussians": level_subset(scene, k).count,
        })
    os.makedirs(args.out, exist_ok=True)
    report = os.path.join(args.out, "eval.csv")
    with open(report, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print("level  psnr_vs_gt  ssim_vs_gt  psnr_vs_lowpass  n_gaussians")
    for r in rows:
        print(f"{r['level']:5d}  {r['psnr_vs_gt']:10.2f}  {r['ssim_vs_gt']:10.4f}"
              f"  {r['psnr_vs_lowpass_gt']:15.2f}  {r['n_gaussians']:11d}")
    print(f"per-level counts: {level_counts(scene)}")
    print(f"report -> {report}")
    return 0


def cmd_fovea(args):
    _print_resolved("fovea", vars(args))
    scene = load_model(args.model)
    _, _, manifest = synth.load_dataset(args.manifest)
    cameras = [synth.camera_from_dict(e["camera"]) for e in manifest["images"]]
    cam = cameras[args.camera_index]
    gaze = tuple(float(x) for x in args.gaze.split(",")) if args.gaze else None
    spec = apps.FoveaSpec.default(cam, gaze=gaze, tau=args.tau,
                                  num_levels=scene.num_levels)
    out = apps.foveate(scene, cam, spec)
    save_model(out, args.out)
    print(f"foveated: kept {out.count} / {scene.count} Gaussians -> {args.out}")
    return 0


def cmd_focus(args):
    _print_resolved("focus", vars(args))
    scene = load_model(args.model)
    _, _, manifest = synth.load_dataset(args.manifest)
    cameras, masks = [], []
    base = os.path.dirname(os.path.abspath(args.manifest))
    for entry in manifest["images"]:
        mask_path = os.path.join(args.masks, entry["path"])
        if os.path.exists(mask_path):
            cameras.append(synth.camera_from_dict(entry["camera"]))
            masks.append(imgproc.load_png(mask_path)[:, :, 0] > 0.5)
    if not cameras:
        raise ValueError(f"no masks matching dataset images found in {args.masks}")
    out = apps.focus(scene, cameras, masks, ratio_threshold=args.threshold)
    save_model(out, args.out)
    print(f"focus: kept {out.count} / {scene.count} Gaussians "
          f"({len(cameras)} mask views) -> {args.out}")
    return 0


def cmd_filter(args):
    _print_resolved("filter", vars(args))
    scene = load_model(args.model)
    if args.recipe:
        recipe = apps.FilterRecipe.from_json(args.recipe)
    else:
        recipe = apps.make_preset(args.preset, scene)
    out = apps.apply_recipe(scene, recipe, seed=args.seed)
    save_model(out, args.out)
    print(f"filtered: {out.count} Gaussians -> {args.out}")
    return 0


def cmd_export_viewer(args):
    _print_resolved("export-viewer", vars(args))
    scene = load_model(args.model)
    os.makedirs(args.out, exist_ok=True)
    shutil.copy(args.model, os.path.join(args.out, "model.fags"))
    base = os.path.dirname(os.path.abspath(args.manifest))
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    with open(os.path.join(args.out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    index = {"model": "model.fags", "manifest": "manifest.json",
             "levels": scene.num_levels, "count": scene.count,
             "counts_per_level": level_counts(scene)}
    with open(os.path.join(args.out, "index.json"), "w") as fh:
        json.dump(index, fh, indent=2)
    if args.dump_json:
        dump = {
            "count": scene.count,
            "levels": scene.num_levels,
            "background": scene.background.tolist(),
            "positions": np.asarray(scene.positions, "<f4").reshape(-1).tolist(),
            "quaternions": np.asarray(scene.quaternions, "<f4").reshape(-1).tolist(),
            "log_scales": np.asarray(scene.log_scales, "<f4").reshape(-1).tolist(),
            "opacity_logits": np.asarray(scene.opacity_logits, "<f4").tolist(),
            "sh_coeffs": np.asarray(scene.sh_coeffs, "<f4").reshape(-1).tolist(),
            "level_tags": scene.levels.tolist(),
        }
        with open(os.path.join(args.out, "model.json"), "w") as fh:
            json.dump(dump, fh)
    print(f"viewer bundle -> {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="freqsplat",
        description="Frequency-aware Gaussian splatting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--n-per-level", default="300,200,100")
    p.add_argument("--cameras", type=int, default=24)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--extent", type=float, default=1.0)
    p.add_argument("--background", type=float, default=0.5)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--init-count", type=int, default=200)
    for f in dataclasses.fields(TrainConfig):
        kind = f.type if not isinstance(f.type, str) else {"int": int, "float": float, "bool": bool}[f.type]
        if kind is bool:
            p.add_argument(f"--{f.name.replace('_', '-')}", type=lambda s: s.lower() in ("1", "true", "yes"),
                           default=None)
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", type=kind, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("render", help="render one view of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--camera-index", type=int, default=0)
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("eval", help="per-level holdout metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--deterministic", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fovea", help="gaze-driven pruning")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--camera-index", type=int, default=0)
    p.add_argument("--gaze", default=None, help="x,y pixels (default center)")
    p.add_argument("--tau", type=float, default=0.01)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fovea)

    p = sub.add_parser("focus", help="mask-voted promptable focus")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--masks", required=True, help="directory of mask PNGs named like dataset images")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_focus)

    p = sub.add_parser("filter", help="artistic level filters")
    p.add_argument("--model", required=True)
    p.add_argument("--preset", default="sharp", choices=["brush", "xray", "sharp"])
    p.add_argument("--recipe", default=None, help="recipe JSON (overrides preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("export-viewer", help="bundle model + manifest for the web viewer")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-json", action="store_true")
    p.set_defaults(func=cmd_export_viewer)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
