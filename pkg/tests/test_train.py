import numpy as np
import pytest

from conftest import front_camera, random_scene
from freqsplat import imgproc, train
from freqsplat.model import sigmoid
from freqsplat.render import RenderOptions, render_backward, render_level_with_state
from freqsplat import synth

NP_OPT = RenderOptions(backend="numpy")


def micro_config(**kw):
    base = dict(levels=2, steps_per_level=30, total_steps=70,
                lambda_ssim=0.0, refine_pause=5, densify_interval=10,
                densify_start=10, densify_stop=60, eval_interval=0,
                densify_grad_threshold=1e-5, seed=3)
    base.update(kw)
    return train.TrainConfig(**base)


def micro_dataset(rng, resolution=16, n_views=4, levels=2):
    gt = synth.make_scene(21, [12] + [6] * (levels - 1), levels, extent=0.6)
    cams = synth.make_rig(21, n_views, 2.5, resolution=resolution)
    views = [(c, render_level_with_state(gt, c, levels, NP_OPT)[0]) for c in cams]
    return gt, views


# -- config -----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        train.TrainConfig(levels=0)
    with pytest.raises(ValueError):
        train.TrainConfig(levels=3, steps_per_level=100, total_steps=200)
    with pytest.raises(ValueError):
        train.TrainConfig(lambda_dft=-1.0)


def test_config_file_roundtrip(tmp_path):
    cfg = train.TrainConfig(levels=2, steps_per_level=50, total_steps=200,
                            lambda_dft=0.01, aa_opacity=False, seed=9)
    path = tmp_path / "cfg.txt"
    path.write_text(train.config_to_text(cfg))
    back = train.load_config(str(path))
    assert back == cfg


def test_config_file_comments_and_errors(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nlevels = 2\n steps_per_level=40 # inline\ntotal_steps=100\n")
    cfg = train.load_config(str(path))
    assert (cfg.levels, cfg.steps_per_level) == (2, 40)
    path.write_text("bogus_key = 1\n")
    with pytest.raises(ValueError):
        train.load_config(str(path))
    path.write_text("levels\n")
    with pytest.raises(ValueError):
        train.load_config(str(path))


def test_densify_stop_default():
    cfg = train.TrainConfig(levels=1, steps_per_level=10, total_steps=500)
    assert cfg.densify_stop_step == 250
    cfg = train.TrainConfig(levels=1, steps_per_level=10, total_steps=500,
                            densify_stop=123)
    assert cfg.densify_stop_step == 123


# -- loss assembly ----------------------------------------------------------

def test_lambda_dk_weights():
    cfg = train.TrainConfig()
    assert train.lambda_dk(cfg, 3, 3) == 1.0
    assert train.lambda_dk(cfg, 1, 3) == cfg.lambda_dk_low
    assert train.lambda_dk(cfg, 1, 1) == 1.0


def test_total_loss_recomposition(rng):
    """The reported total equals the weighted sum of its reported parts."""
    cfg = train.TrainConfig(levels=3, steps_per_level=10, total_steps=100)
    gt = rng.random((64, 64, 3))
    renders = [rng.random((64, 64, 3)) for _ in range(3)]
    total, parts = train.total_loss(renders, gt, cfg, 3)
    recomposed = (cfg.lambda_im * sum(
        train.lambda_dk(cfg, k, 3) * parts["d_im"][k - 1] for k in (1, 2, 3))
        + cfg.lambda_dft * sum(parts["d_dft"]))
    assert np.isclose(total, recomposed)
    assert len(parts["d_dft"]) == 2  # no DFT term for the top level


def test_total_loss_single_level_no_dft(rng):
    cfg = train.TrainConfig(levels=1, steps_per_level=10, total_steps=100)
    gt = rng.random((16, 16, 3))
    total, parts = train.total_loss([gt * 0.9], gt, cfg, 1)
    assert parts["loss_dft"] == 0.0
    assert parts["d_dft"] == []


def test_total_loss_matches_manual_assembly(rng):
    cfg = train.TrainConfig(levels=2, steps_per_level=10, total_steps=100,
                            lambda_ssim=0.0, lambda_dft=0.01, lambda_dk_low=0.3)
    gt = rng.random((16, 16, 3))
    renders = [rng.random((16, 16, 3)) for _ in range(2)]
    total, parts = train.total_loss(renders, gt, cfg, 2)
    t1 = imgproc.lowpass_gt(gt, 2, 1)
    manual = (0.3 * imgproc.spatial_discrepancy(t1, renders[0], 0.0, reduce_times=1)
              + 1.0 * imgproc.spatial_discrepancy(gt, renders[1], 0.0)
              + 0.01 * imgproc.dft_discrepancy(t1, renders[0]))
    assert np.isclose(total, manual)


def test_total_loss_zero_at_ground_truth(rng):
    cfg = train.TrainConfig(levels=2, steps_per_level=10, total_steps=100)
    gt = rng.random((32, 32, 3))
    renders = [imgproc.lowpass_gt(gt, 2, 1), gt.copy()]
    total, parts = train.total_loss(renders, gt, cfg, 2)
    assert total < 1e-10


def test_total_loss_grads_finite_difference(rng):
    cfg = train.TrainConfig(levels=2, steps_per_level=10, total_steps=100,
                            lambda_ssim=0.2, lambda_dft=0.05)
    gt = rng.random((32, 32, 3))
    renders = [rng.random((32, 32, 3)) for _ in range(2)]
    total, parts, grads = train.total_loss_grads(renders, gt, cfg, 2)
    eps = 1e-6
    for k in range(2):
        for _ in range(8):
            i, j, c = rng.integers(32), rng.integers(32), rng.integers(3)
            rp = [r.copy() for r in renders]
            rm = [r.copy() for r in renders]
            rp[k][i, j, c] += eps
            rm[k][i, j, c] -= eps
            fd = (train.total_loss(rp, gt, cfg, 2)[0]
                  - train.total_loss(rm, gt, cfg, 2)[0]) / (2 * eps)
            assert abs(fd - grads[k][i, j, c]) < 2e-5 * max(1.0, abs(fd))


def test_total_loss_wrong_render_count(rng):
    cfg = train.TrainConfig()
    with pytest.raises(ValueError):
        train.total_loss([rng.random((8, 8, 3))], rng.random((8, 8, 3)), cfg, 2)


# -- end-to-end gradient through renderer + loss ----------------------------

def test_end_to_end_parameter_gradient(rng):
    """FD check of d(total loss)/d(scene params) through render + loss."""
    cfg = train.TrainConfig(levels=2, steps_per_level=10, total_steps=100,
                            lambda_ssim=0.0, lambda_dft=0.01)
    scene = random_scene(np.random.default_rng(19), 3, num_levels=2)
    cam = front_camera(width=8, height=8)
    gt = np.clip(rng.random((8, 8, 3)), 0.05, 0.95)

    def loss_of(sc):
        renders = [render_level_with_state(sc, cam, k, NP_OPT)[0] for k in (1, 2)]
        return train.total_loss(renders, gt, cfg, 2)[0]

    renders, states = [], []
    for k in (1, 2):
        img, st = render_level_with_state(scene, cam, k, NP_OPT)
        renders.append(img)
        states.append(st)
    total, parts, image_grads = train.total_loss_grads(renders, gt, cfg, 2)
    grads = None
    for st, g in zip(states, image_grads):
        gg = render_backward(st, g, scene)
        grads = gg if grads is None else grads.add(gg)

    analytic = {"positions": grads.d_positions, "log_scales": grads.d_log_scales,
                "opacity_logits": grads.d_opacity_logits, "sh_coeffs": grads.d_sh}
    eps = 1e-6
    checked = 0
    for name, g_arr in analytic.items():
        flat = getattr(scene, name).reshape(-1)
        for p in rng.choice(flat.size, size=min(6, flat.size), replace=False):
            sp, sm = scene.copy(), scene.copy()
            getattr(sp, name).reshape(-1)[p] += eps
            getattr(sm, name).reshape(-1)[p] -= eps
            fd = (loss_of(sp) - loss_of(sm)) / (2 * eps)
            an = g_arr.reshape(-1)[p]
            if abs(fd) < 1e-9 and abs(an) < 1e-9:
                continue
            assert abs(fd - an) <= 1e-3 * max(abs(fd), abs(an), 1e-5), (name, p, fd, an)
            checked += 1
    assert checked >= 10


# -- optimizer --------------------------------------------------------------

def test_adam_single_step_closed_form(rng):
    cfg = train.TrainConfig(levels=1, steps_per_level=10, total_steps=100)
    scene = random_scene(rng, 3)
    opt = train.Adam(cfg)
    opt.reinitialize(scene)
    from freqsplat.render import RenderGrads
    grads = RenderGrads.zeros(3, 4)
    grads.d_positions[:] = 2.0
    before = scene.positions.copy()
    lrs = {n: 0.0 for n in train.PARAM_NAMES}
    lrs["positions"] = 0.1
    opt.step(scene, grads, lrs)
    # bias-corrected first step: update = g / (|g| + eps) = sign(g)
    assert np.allclose(scene.positions, before - 0.1, atol=1e-12)


def test_adam_remap_rows(rng):
    cfg = train.TrainConfig(levels=1, steps_per_level=10, total_steps=100)
    scene = random_scene(rng, 4)
    opt = train.Adam(cfg)
    opt.reinitialize(scene)
    opt.moments["positions"][0][:] = np.arange(12).reshape(4, 3)
    opt.remap_rows(np.array([0, 2]), 3)
    m1 = opt.moments["positions"][0]
    assert m1.shape == (5, 3)
    assert np.array_equal(m1[0], [0, 1, 2])
    assert np.array_equal(m1[1], [6, 7, 8])
    assert np.all(m1[2:] == 0.0)


# -- schedule ---------------------------------------------------------------

def test_schedule_introductions_and_doubling(rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config()
    scene = synth.init_scene(3, 10, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, [], cfg)
    tr.options = NP_OPT
    tr.run(70)
    n = {rec["step"]: rec["n_gaussians"] for rec in tr.state.metrics}
    levels_at = {rec["step"]: len(rec["n_per_level"]) for rec in tr.state.metrics}
    # introduction exactly at step 30, nowhere else
    assert levels_at[29] == 1 and levels_at[30] == 2 and levels_at[69] == 2
    assert n[30] == 2 * n[29]
    # clones inherit geometry: per-level counts equal right after introduction
    rec30 = next(r for r in tr.state.metrics if r["step"] == 30)
    assert rec30["n_per_level"][0] == rec30["n_per_level"][1]


def test_schedule_resolution_and_camera_scaling(rng):
    gt, views = micro_dataset(rng, resolution=16)
    cfg = micro_config()
    scene = synth.init_scene(3, 8, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, [], cfg)
    assert tr.resolution_factor() == 0.5
    pv = tr.phase_views()
    assert pv[0][1].shape == (8, 8, 3)
    assert pv[0][0].width == 8
    # reduced GT matches applying REDUCE directly
    assert np.allclose(pv[0][1], imgproc.reduce_image(views[0][1]))
    tr.state.active_m = 2
    assert tr.resolution_factor() == 1.0
    assert tr.phase_views()[0][1].shape == (16, 16, 3)


def test_position_lr_decay_and_phase_restart(rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config()
    scene = synth.init_scene(3, 8, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, [], cfg, extent=2.0)
    lr0 = tr.position_lr()
    assert np.isclose(lr0, cfg.lr_position * 2.0)
    tr.state.step = 25
    lr25 = tr.position_lr()
    assert lr25 < lr0
    tr.state.step = 30
    tr.state.phase_start = 30
    assert np.isclose(tr.position_lr(), lr0)  # restarted


def test_optimizer_reinitialized_at_introduction(rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config()
    scene = synth.init_scene(3, 8, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, [], cfg)
    tr.options = NP_OPT
    for _ in range(30):
        tr.train_step()
    assert tr.state.active_m == 1
    t_before = tr.optimizer.t
    assert t_before == 30
    tr.train_step()  # introduction happens inside this step
    assert tr.state.active_m == 2
    assert tr.optimizer.t == 1  # fresh optimizer state for the new phase
    assert tr.state.adc_resume_step == 30 + cfg.refine_pause


def test_trainer_rejects_multilevel_start(rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config()
    scene = synth.make_scene(3, [4, 4], 2, extent=0.6)
    with pytest.raises(ValueError):
        train.Trainer(scene, views, [], cfg)


# -- densification ----------------------------------------------------------

def test_densify_split_clone_prune(rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config(densify_grad_threshold=1e-4, split_scale_frac=0.05)
    scene = synth.init_scene(3, 12, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, [], cfg, extent=1.0)
    sc = tr.scene
    n = sc.count
    # forge statistics: splat 0 high-grad & large (split), 1 high-grad & small
    # (clone), 2 transparent (prune)
    tr.state.grad_norm_sum = np.zeros(n)
    tr.state.grad_hits = np.ones(n)
    tr.state.grad_norm_sum[0] = 1.0
    tr.state.grad_norm_sum[1] = 1.0
    sc.log_scales[0] = np.log(0.2)   # large
    sc.log_scales[1] = np.log(0.001)
    sc.opacity_logits[2] = -10.0     # below prune threshold
    lvl0 = sc.levels[0]
    pos2 = sc.positions[2].copy()
    tr.densify_and_prune()
    out = tr.scene
    # -1 pruned, -1 split parent, +2 split children, +1 clone
    assert out.count == n + 1
    # split children shrink scales by 1.6 and inherit the level
    children = np.nonzero(np.isclose(out.log_scales[:, 0], np.log(0.2) - np.log(1.6)))[0]
    assert children.size == 2
    assert np.all(out.levels[children] == lvl0)
    # pruned position gone
    assert not np.any(np.all(out.positions == pos2, axis=1))
    # optimizer moments track the new row count
    assert tr.optimizer.moments["positions"][0].shape == (out.count, 3)
    # accumulators reset
    assert np.all(tr.state.grad_norm_sum == 0)


def test_densify_level_inheritance_in_training(rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config(densify_grad_threshold=1e-6)  # aggressive growth
    scene = synth.init_scene(3, 10, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, [], cfg)
    tr.options = NP_OPT
    tr.run(70)
    assert tr.scene.count > 20
    assert set(np.unique(tr.scene.levels)) <= {1, 2}


def test_adc_pause_window(rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config()
    scene = synth.init_scene(3, 8, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, [], cfg)
    tr.state.step = 5
    assert not tr.adc_active()          # before densify_start
    tr.state.step = 20
    assert tr.adc_active()
    tr.state.adc_resume_step = 35
    tr.state.step = 34
    assert not tr.adc_active()          # paused after introduction
    tr.state.step = 35
    assert tr.adc_active()
    tr.state.step = 60
    assert not tr.adc_active()          # past densify_stop


# -- training dynamics ------------------------------------------------------

def test_smoke_training_loss_drops(rng):
    gt, views = micro_dataset(rng, resolution=16, n_views=6)
    cfg = micro_config(total_steps=800, steps_per_level=200, densify_stop=600,
                       densify_grad_threshold=2e-4)
    scene = synth.init_scene(5, 25, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, views[:1], cfg)
    tr.options = NP_OPT
    tr.run(800)
    first = np.mean([m["loss"] for m in tr.state.metrics[:10]])
    last = np.mean([m["loss"] for m in tr.state.metrics[-10:]])
    assert last < 0.5 * first, (first, last)


def test_training_deterministic(rng):
    def run():
        gt, views = micro_dataset(np.random.default_rng(7))
        cfg = micro_config(total_steps=40, steps_per_level=15)
        scene = synth.init_scene(3, 8, cfg.levels, extent=0.6)
        tr = train.Trainer(scene, views, [], cfg)
        tr.options = NP_OPT
        tr.run(40)
        return tr.scene
    a, b = run(), run()
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.sh_coeffs, b.sh_coeffs)


def test_metrics_csv(tmp_path, rng):
    gt, views = micro_dataset(rng)
    cfg = micro_config(total_steps=35, steps_per_level=15, eval_interval=10)
    scene = synth.init_scene(3, 8, cfg.levels, extent=0.6)
    tr = train.Trainer(scene, views, views[:1], cfg)
    tr.options = NP_OPT
    tr.run(35)
    path = tmp_path / "metrics.csv"
    train.write_metrics_csv(tr.state.metrics, cfg.levels, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == ("step,loss,loss_im,loss_dft,n_gaussians,"
                        "n_level_1,n_level_2,psnr_holdout")
    assert len(lines) == 36
    row10 = lines[11].split(",")
    assert row10[0] == "10"
    assert row10[-1] != ""  # holdout PSNR logged at the eval interval
