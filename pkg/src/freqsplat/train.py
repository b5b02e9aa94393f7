"""Loss assembly, progressive coarse-to-fine schedule, Adam optimizer, and
adaptive density control with level inheritance."""

import csv
from dataclasses import dataclass, field, fields, asdict

import numpy as np

from . import imgproc
from .model import GaussianScene, build_covariance, introduce_level, level_counts
from .render import RenderOptions, render_level_with_state, render_backward


@dataclass
class TrainConfig:
    levels: int = 3
    steps_per_level: int = 2500      # level introduction period
    total_steps: int = 30000
    lambda_im: float = 1.0
    lambda_dft: float = 0.001
    lambda_ssim: float = 0.2
    lambda_dk_low: float = 0.1       # image-loss weight for non-top levels
    refine_pause: int = 300          # ADC pause after each level introduction

    densify_interval: int = 100
    densify_start: int = 100
    densify_stop: int = 0            # 0: defaults to total_steps // 2
    densify_grad_threshold: float = 2e-4
    split_scale_frac: float = 0.01
    prune_opacity: float = 0.005

    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_sh: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15

    aa_opacity: bool = True
    residual_colors: bool = True     # ablation: off forces [0,1] colors everywhere
    seed: int = 0
    eval_interval: int = 500
    deterministic: bool = True

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.steps_per_level * (self.levels - 1) >= self.total_steps:
            raise ValueError("level introductions must fit inside total_steps")
        for name in ("lambda_im", "lambda_dft", "lambda_ssim", "lambda_dk_low"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def densify_stop_step(self):
        return self.densify_stop or self.total_steps // 2

    def render_options(self):
        return RenderOptions(aa_opacity=self.aa_opacity,
                             residual_colors=self.residual_colors)


def load_config(path):
    """Flat key = value text file mapped onto TrainConfig fields."""
    values = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
            kind = types[key]
            kind = kind if isinstance(kind, str) else kind.__name__
            if kind == "bool":
                values[key] = raw.lower() in ("1", "true", "yes", "on")
            elif kind == "int":
                values[key] = int(raw)
            else:
                values[key] = float(raw)
    return TrainConfig(**values)


def config_to_text(cfg):
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


def lambda_dk(cfg, k, active_m):
    return 1.0 if k == active_m else cfg.lambda_dk_low


def total_loss(renders, gt, cfg, active_m):
    """Weighted spatial + frequency loss over the accumulated-level renders.

    Returns (total, parts) where parts has loss_im / loss_dft and the
    per-level discrepancies.
    """
    total, parts, _ = _loss_core(renders, gt, cfg, active_m, want_grads=False)
    return total, parts


def total_loss_grads(renders, gt, cfg, active_m):
    """total_loss plus the gradient image for each accumulated-level render."""
    return _loss_core(renders, gt, cfg, active_m, want_grads=True)


def _loss_core(renders, gt, cfg, active_m, want_grads):
    if len(renders) != active_m:
        raise ValueError(f"expected {active_m} renders, got {len(renders)}")
    loss_im = 0.0
    loss_dft = 0.0
    d_im = []
    d_dft = []
    grads = [] if want_grads else None
    for k in range(1, active_m + 1):
        target = imgproc.lowpass_gt(gt, active_m, k)
        rendered = renders[k - 1]
        weight = lambda_dk(cfg, k, active_m)
        if want_grads:
            sp, g_sp = imgproc.spatial_discrepancy_grad(
                target, rendered, cfg.lambda_ssim, reduce_times=active_m - k)
            grad = cfg.lambda_im * weight * g_sp
        else:
            sp = imgproc.spatial_discrepancy(
                target, rendered, cfg.lambda_ssim, reduce_times=active_m - k)
        d_im.append(sp)
        loss_im += weight * sp
        if k < active_m:
            if want_grads:
                df, g_df = imgproc.dft_discrepancy_grad(target, rendered)
                grad = grad + cfg.lambda_dft * g_df
            else:
                df = imgproc.dft_discrepancy(target, rendered)
            d_dft.append(df)
            loss_dft += df
        if want_grads:
            grads.append(grad)
    total = cfg.lambda_im * loss_im + cfg.lambda_dft * loss_dft
    parts = {"loss_im": loss_im, "loss_dft": loss_dft,
             "d_im": d_im, "d_dft": d_dft}
    return total, parts, grads


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

PARAM_NAMES = ("positions", "quaternions", "log_scales", "opacity_logits", "sh_coeffs")


class Adam:
    """Per-array Adam with row add/remove so moments track scene arrays."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.moments = {}
        self.t = 0

    def reinitialize(self, scene):
        self.t = 0
        self.moments = {name: (np.zeros_like(getattr(scene, name)),
                               np.zeros_like(getattr(scene, name)))
                        for name in PARAM_NAMES}

    def remap_rows(self, keep_idx, n_new_rows):
        """Carry moments for surviving rows, zero for appended rows."""
        for name, (m1, m2) in self.moments.items():
            shape = (keep_idx.size + n_new_rows,) + m1.shape[1:]
            nm1 = np.zeros(shape)
            nm2 = np.zeros(shape)
            nm1[:keep_idx.size] = m1[keep_idx]
            nm2[:keep_idx.size] = m2[keep_idx]
            self.moments[name] = (nm1, nm2)

    def step(self, scene, grads, lrs):
        cfg = self.cfg
        self.t += 1
        bc1 = 1.0 - cfg.adam_beta1 ** self.t
        bc2 = 1.0 - cfg.adam_beta2 ** self.t
        grad_arrays = {
            "positions": grads.d_positions,
            "quaternions": grads.d_quaternions,
            "log_scales": grads.d_log_scales,
            "opacity_logits": grads.d_opacity_logits,
            "sh_coeffs": grads.d_sh,
        }
        for name in PARAM_NAMES:
            g = grad_arrays[name]
            m1, m2 = self.moments[name]
            m1 *= cfg.adam_beta1
            m1 += (1 - cfg.adam_beta1) * g
            m2 *= cfg.adam_beta2
            m2 += (1 - cfg.adam_beta2) * g * g
            update = (m1 / bc1) / (np.sqrt(m2 / bc2) + cfg.adam_eps)
            param = getattr(scene, name)
            param -= lrs[name] * update


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainState:
    step: int = 0
    active_m: int = 1
    phase_start: int = 0
    adc_resume_step: int = 0
    grad_norm_sum: np.ndarray = None
    grad_hits: np.ndarray = None
    metrics: list = field(default_factory=list)


class NonFiniteLossError(RuntimeError):
    pass


class Trainer:
    """Owns the scene, optimizer state, and the progressive schedule.

    ``views`` is a list of (Camera, full-resolution image) training pairs;
    ``holdout`` the held-out pairs used for PSNR logging.
    """

    def __init__(self, scene, views, holdout, cfg, extent=None):
        self.scene = scene
        self.views = views
        self.holdout = holdout
        self.cfg = cfg
        self.extent = extent if extent is not None else max(scene.extent(), 1.0)
        self.rng = np.random.default_rng(cfg.seed)
        self.optimizer = Adam(cfg)
        self.optimizer.reinitialize(scene)
        self.state = TrainState(
            grad_norm_sum=np.zeros(scene.count),
            grad_hits=np.zeros(scene.count))
        self.options = cfg.render_options()
        self._phase_cache = {}
        if scene.num_levels != 1:
            raise ValueError("training starts from a single-level scene")

    # -- schedule -----------------------------------------------------------

    def resolution_factor(self):
        return 0.5 ** (self.cfg.levels - self.state.active_m)

    def phase_views(self):
        """Training views downscaled (by REDUCE chains) to the phase resolution."""
        m = self.state.active_m
        if m not in self._phase_cache:
            times = self.cfg.levels - m
            factor = self.resolution_factor()
            pairs = []
            for camera, image in self.views:
                img = image
                for _ in range(times):
                    img = imgproc.reduce_image(img)
                pairs.append((camera.scaled(factor), img))
            self._phase_cache[m] = pairs
        return self._phase_cache[m]

    def advance_schedule(self):
        """Introduce the next level at multiples of the introduction period."""
        cfg = self.cfg
        st = self.state
        if st.active_m >= cfg.levels:
            return False
        if st.step == 0 or st.step % cfg.steps_per_level != 0:
            return False
        if st.step // cfg.steps_per_level != st.active_m:
            return False
        self.scene = introduce_level(self.scene, st.active_m + 1)
        st.active_m += 1
        st.phase_start = st.step
        st.adc_resume_step = st.step + cfg.refine_pause
        self.optimizer.reinitialize(self.scene)
        st.grad_norm_sum = np.zeros(self.scene.count)
        st.grad_hits = np.zeros(self.scene.count)
        return True

    def adc_active(self):
        cfg = self.cfg
        st = self.state
        return (cfg.densify_start <= st.step < cfg.densify_stop_step
                and st.step >= st.adc_resume_step)

    def position_lr(self):
        cfg = self.cfg
        t = (self.state.step - self.state.phase_start) / max(cfg.total_steps, 1)
        decay = (cfg.lr_position_final / cfg.lr_position) ** min(t, 1.0)
        return cfg.lr_position * decay * self.extent

    def learning_rates(self):
        cfg = self.cfg
        return {
            "positions": self.position_lr(),
            "quaternions": cfg.lr_rotation,
            "log_scales": cfg.lr_scale,
            "opacity_logits": cfg.lr_opacity,
            "sh_coeffs": cfg.lr_sh,
        }

    # -- one optimization step ---------------------------------------------

    def train_step(self):
        cfg = self.cfg
        st = self.state
        self.advance_schedule()
        camera, gt = self.phase_views()[
            int(self.rng.integers(len(self.views)))]

        renders = []
        states = []
        for k in range(1, st.active_m + 1):
            img, rstate = render_level_with_state(self.scene, camera, k, self.options)
            renders.append(img)
            states.append(rstate)

        total, parts, image_grads = total_loss_grads(renders, gt, cfg, st.active_m)
        if not np.isfinite(total):
            raise NonFiniteLossError(
                f"non-finite loss at step {st.step}: parts={parts}")

        grads = None
        for rstate, g_img in zip(states, image_grads):
            g = render_backward(rstate, g_img, self.scene)
            grads = g if grads is None else grads.add(g)

        self.optimizer.step(self.scene, grads, self.learning_rates())
        self.scene.renormalize_quaternions()

        st.grad_norm_sum += grads.screen_grad_norm
        st.grad_hits += grads.screen_grad_hits

        if (self.adc_active() and st.step > 0
                and st.step % cfg.densify_interval == 0):
            self.densify_and_prune()

        record = {"step": st.step, "loss": total,
                  "loss_im": parts["loss_im"], "loss_dft": parts["loss_dft"],
                  "n_gaussians": self.scene.count,
                  "n_per_level": level_counts(self.scene),
                  "psnr_holdout": ""}
        if cfg.eval_interval and st.step % cfg.eval_interval == 0 and self.holdout:
            record["psnr_holdout"] = self.holdout_psnr()
        st.metrics.append(record)
        st.step += 1
        return total, parts

    def run(self, steps=None, progress=None):
        steps = steps if steps is not None else self.cfg.total_steps
        for _ in range(steps):
            self.train_step()
            if progress is not None:
                progress(self.state, self.scene)
        return self.scene

    def holdout_psnr(self):
        vals = []
        for camera, gt in self.holdout:
            img, _ = render_level_with_state(
                self.scene, camera, self.scene.num_levels, self.options,
                record=False)
            vals.append(imgproc.psnr(gt, img))
        return float(np.mean(vals))

    # -- adaptive density control ------------------------------------------

    def densify_and_prune(self):
        cfg = self.cfg
        st = self.state
        scene = self.scene
        n = scene.count
        avg_grad = st.grad_norm_sum / np.maximum(st.grad_hits, 1.0)
        high = avg_grad >= cfg.densify_grad_threshold
        max_scale = np.exp(scene.log_scales).max(axis=1)
        large = max_scale > cfg.split_scale_frac * self.extent
        prune = scene.opacities < cfg.prune_opacity

        split = high & large & ~prune
        clone = high & ~large & ~prune
        keep = ~(prune | split)

        keep_idx = np.nonzero(keep)[0]
        clone_idx = np.nonzero(clone & keep)[0]
        split_idx = np.nonzero(split)[0]

        new_parts = {name: [getattr(scene, name)[keep_idx]] for name in PARAM_NAMES}
        new_levels = [scene.levels[keep_idx]]
        n_new = 0

        if clone_idx.size:
            for name in PARAM_NAMES:
                new_parts[name].append(getattr(scene, name)[clone_idx].copy())
            new_levels.append(scene.levels[clone_idx].copy())
            n_new += clone_idx.size

        if split_idx.size:
            cov = build_covariance(scene.log_scales[split_idx],
                                   scene.quaternions[split_idx])
            chol = np.linalg.cholesky(cov + 1e-12 * np.eye(3))
            for _ in range(2):
                noise = self.rng.standard_normal((split_idx.size, 3))
                offs = np.einsum("mij,mj->mi", chol, noise)
                new_parts["positions"].append(scene.positions[split_idx] + offs)
                new_parts["quaternions"].append(scene.quaternions[split_idx].copy())
                new_parts["log_scales"].append(
                    scene.log_scales[split_idx] - np.log(1.6))
                new_parts["opacity_logits"].append(
                    scene.opacity_logits[split_idx].copy())
                new_parts["sh_coeffs"].append(scene.sh_coeffs[split_idx].copy())
                new_levels.append(scene.levels[split_idx].copy())
            n_new += 2 * split_idx.size

        self.scene = GaussianScene(
            np.concatenate(new_parts["positions"]),
            np.concatenate(new_parts["quaternions"]),
            np.concatenate(new_parts["log_scales"]),
            np.concatenate(new_parts["opacity_logits"]),
            np.concatenate(new_parts["sh_coeffs"]),
            np.concatenate(new_levels),
            num_levels=scene.num_levels, background=scene.background.copy())
        self.optimizer.remap_rows(keep_idx, n_new)
        st.grad_norm_sum = np.zeros(self.scene.count)
        st.grad_hits = np.zeros(self.scene.count)


def write_metrics_csv(metrics, num_levels, path):
    header = (["step", "loss", "loss_im", "loss_dft", "n_gaussians"]
              + [f"n_level_{l}" for l in range(1, num_levels + 1)]
              + ["psnr_holdout"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for rec in metrics:
            per_level = list(rec["n_per_level"])
            per_level += [0] * (num_levels - len(per_level))
            writer.writerow([rec["step"], rec["loss"], rec["loss_im"],
                             rec["loss_dft"], rec["n_gaussians"],
                             *per_level, rec["psnr_holdout"]])
