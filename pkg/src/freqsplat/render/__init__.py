"""Differentiable forward rasterizer and its analytic backward pass.

Projection follows the EWA local-affine approximation: the 3D covariance is
mapped through J W Sigma W^T J^T, regularized with a 0.3-pixel blur, and
splats are alpha-blended front to back per accumulated frequency level.
"""

from dataclasses import dataclass, field

import numpy as np

from ..model import (SH_C1, GaussianScene, eval_color, build_covariance,
                     quaternion_to_rotation, level_subset, sigmoid)
from . import backend as _backend

TILE_SIZE = 16
BLUR_REG = 0.3
FRUSTUM_MARGIN = 1.3
EARLY_STOP = 1e-4
CUTOFF = 18.0


@dataclass
class RenderOptions:
    aa_opacity: bool = True
    residual_colors: bool = True   # off: all levels use the plain [0,1] mapping
    tile_size: int = TILE_SIZE
    early_stop: float = EARLY_STOP
    cutoff: float = CUTOFF
    backend: str | None = None

    def backend_name(self):
        return self.backend or _backend.backend_name()


@dataclass
class Projection:
    """Screen-space splats for the visible subset, sorted for blending."""
    idx: np.ndarray          # (M,) indices into the source scene
    mean2d: np.ndarray       # (M, 2)
    depth: np.ndarray        # (M,)
    p_cam: np.ndarray        # (M, 3)
    cov3d: np.ndarray        # (M, 3, 3)
    m_mat: np.ndarray        # (M, 2, 3)  J @ W
    sigma_pre: np.ndarray    # (M, 2, 2)  screen covariance before blur reg
    inv_abc: np.ndarray      # (M, 3)     inverse of regularized covariance
    aa_scale: np.ndarray     # (M,)       anti-aliasing opacity factor
    alpha_sig: np.ndarray    # (M,)       sigmoid opacity
    alpha_eff: np.ndarray    # (M,)
    colors: np.ndarray       # (M, 3)     level-mapped, possibly negative
    dirs: np.ndarray         # (M, 3)
    view_dist: np.ndarray    # (M,)
    radius: np.ndarray       # (M,)    circumscribed-circle radius
    ext: np.ndarray          # (M, 2)  per-axis extent of the cutoff ellipse
    levels: np.ndarray       # (M,)


@dataclass
class RenderState:
    """Forward-pass products needed by render_backward."""
    scene_count: int
    sh_basis: int
    camera: object
    proj: Projection
    options: RenderOptions
    bboxes: np.ndarray       # (M, 4) int
    pre_clamp: np.ndarray    # (H, W, 3)
    t_final: np.ndarray      # (H, W)
    background: np.ndarray
    hits: tuple = None       # per-pixel contributor stream (numba backend)


@dataclass
class RenderGrads:
    """Per-Gaussian parameter gradients plus the ADC screen-grad accumulator."""
    d_positions: np.ndarray
    d_quaternions: np.ndarray
    d_log_scales: np.ndarray
    d_opacity_logits: np.ndarray
    d_sh: np.ndarray
    screen_grad_norm: np.ndarray
    screen_grad_hits: np.ndarray

    @staticmethod
    def zeros(n, basis):
        return RenderGrads(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
                           np.zeros(n), np.zeros((n, 3, basis)),
                           np.zeros(n), np.zeros(n))

    def add(self, other):
        self.d_positions += other.d_positions
        self.d_quaternions += other.d_quaternions
        self.d_log_scales += other.d_log_scales
        self.d_opacity_logits += other.d_opacity_logits
        self.d_sh += other.d_sh
        self.screen_grad_norm += other.screen_grad_norm
        self.screen_grad_hits += other.screen_grad_hits
        return self


def project(scene, camera, options=None, mask=None):
    """Project (a subset of) the scene into screen-space splats.

    Culls Gaussians behind the near plane or wholly outside a
    FRUSTUM_MARGIN-expanded image rectangle. Splats come back sorted by
    (depth, source index).
    """
    options = options or RenderOptions()
    n = scene.count
    idx = np.arange(n) if mask is None else np.nonzero(mask)[0]
    if idx.size == 0:
        return _empty_projection()
    pos = scene.positions[idx]
    p_cam = pos @ camera.rotation.T + camera.translation
    vis = p_cam[:, 2] > camera.near
    idx, pos, p_cam = idx[vis], pos[vis], p_cam[vis]
    if idx.size == 0:
        return _empty_projection()

    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    mean2d = np.stack([camera.fx * x / z + camera.cx,
                       camera.fy * y / z + camera.cy], axis=1)

    cov3d = build_covariance(scene.log_scales[idx], scene.quaternions[idx])
    jac = np.zeros((idx.size, 2, 3))
    jac[:, 0, 0] = camera.fx / z
    jac[:, 0, 2] = -camera.fx * x / z ** 2
    jac[:, 1, 1] = camera.fy / z
    jac[:, 1, 2] = -camera.fy * y / z ** 2
    m_mat = jac @ camera.rotation
    sigma_pre = m_mat @ cov3d @ np.swapaxes(m_mat, 1, 2)

    a = sigma_pre[:, 0, 0] + BLUR_REG
    b = sigma_pre[:, 0, 1]
    c = sigma_pre[:, 1, 1] + BLUR_REG
    det = a * c - b * b
    inv_abc = np.stack([c / det, -b / det, a / det], axis=1)

    if options.aa_opacity:
        det_pre = (sigma_pre[:, 0, 0] * sigma_pre[:, 1, 1]
                   - sigma_pre[:, 0, 1] ** 2)
        aa_scale = np.sqrt(np.maximum(det_pre, 0.0) / det)
    else:
        aa_scale = np.ones(idx.size)

    alpha_sig = sigmoid(scene.opacity_logits[idx])
    alpha_eff = alpha_sig * aa_scale

    # splat extent: circumscribed circle from the dominant eigenvalue, and
    # the tighter per-axis bounding box of the cutoff ellipse
    half_tr = 0.5 * (a + c)
    lam_max = half_tr + np.sqrt(np.maximum(half_tr ** 2 - det, 0.0))
    radius = np.sqrt(options.cutoff * lam_max)
    ext = np.sqrt(options.cutoff * np.stack([a, c], axis=1))

    mx, my = mean2d[:, 0], mean2d[:, 1]
    ex = (FRUSTUM_MARGIN - 1.0) * 0.5 * camera.width
    ey = (FRUSTUM_MARGIN - 1.0) * 0.5 * camera.height
    inside = ((mx + ext[:, 0] >= -ex) & (mx - ext[:, 0] <= camera.width + ex)
              & (my + ext[:, 1] >= -ey) & (my - ext[:, 1] <= camera.height + ey))
    keep = np.nonzero(inside)[0]
    if keep.size == 0:
        return _empty_projection()

    v = pos[keep] - camera.center
    dist = np.linalg.norm(v, axis=1)
    dirs = v / np.maximum(dist[:, None], 1e-12)
    color_levels = scene.levels[idx[keep]]
    if not options.residual_colors:
        color_levels = np.ones_like(color_levels)
    colors = eval_color(scene.sh_coeffs[idx[keep]], dirs, color_levels)

    proj = Projection(
        idx=idx[keep], mean2d=mean2d[keep], depth=z[keep], p_cam=p_cam[keep],
        cov3d=cov3d[keep], m_mat=m_mat[keep], sigma_pre=sigma_pre[keep],
        inv_abc=inv_abc[keep], aa_scale=aa_scale[keep],
        alpha_sig=alpha_sig[keep], alpha_eff=alpha_eff[keep], colors=colors,
        dirs=dirs, view_dist=dist, radius=radius[keep], ext=ext[keep],
        levels=color_levels)
    order = np.lexsort((proj.idx, proj.depth))
    return _reorder(proj, order)


def _empty_projection():
    z0 = np.zeros(0)
    return Projection(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), z0,
                      np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 2, 3)),
                      np.zeros((0, 2, 2)), np.zeros((0, 3)), z0, z0, z0,
                      np.zeros((0, 3)), np.zeros((0, 3)), z0, z0,
                      np.zeros((0, 2)), np.zeros(0, dtype=np.int64))


def _reorder(proj, order):
    return Projection(**{name: getattr(proj, name)[order]
                         for name in proj.__dataclass_fields__})


def _bboxes(proj, width, height):
    boxes = np.zeros((proj.idx.size, 4), dtype=np.int64)
    if proj.idx.size == 0:
        return boxes
    boxes[:, 0] = np.clip(np.floor(proj.mean2d[:, 0] - proj.ext[:, 0]), 0, width)
    boxes[:, 1] = np.clip(np.ceil(proj.mean2d[:, 0] + proj.ext[:, 0]) + 1, 0, width)
    boxes[:, 2] = np.clip(np.floor(proj.mean2d[:, 1] - proj.ext[:, 1]), 0, height)
    boxes[:, 3] = np.clip(np.ceil(proj.mean2d[:, 1] + proj.ext[:, 1]) + 1, 0, height)
    return boxes


def render_level(scene, camera, k, options=None):
    img, _ = render_level_with_state(scene, camera, k, options, record=False)
    return img


def render_level_with_state(scene, camera, k, options=None, record=True):
    """Rasterize all Gaussians with level <= k at full resolution.

    Returns the clamped image and the state needed for render_backward;
    record=False skips the per-pixel contributor stream (forward only).
    """
    options = options or RenderOptions()
    if not (1 <= k <= scene.num_levels):
        raise ValueError(f"level {k} outside [1, {scene.num_levels}]")
    proj = project(scene, camera, options, mask=scene.levels <= k)
    h, w = camera.height, camera.width
    boxes = _bboxes(proj, w, h)
    bg = scene.background

    hits = None
    if options.backend_name() == "numba":
        from . import _numba
        tile = options.tile_size
        ntx = (w + tile - 1) // tile
        nty = (h + tile - 1) // tile
        offsets, ids = _numba.build_tile_lists(
            boxes[:, 0] // tile, (np.maximum(boxes[:, 1], 1) - 1) // tile + 1,
            boxes[:, 2] // tile, (np.maximum(boxes[:, 3], 1) - 1) // tile + 1,
            ntx, nty, tile, proj.mean2d, proj.radius)
        if record:
            capacity = _numba.hit_capacity(h, w, tile, offsets)
            hit_start = np.zeros((h, w), dtype=np.int64)
            hit_count = np.zeros((h, w), dtype=np.int64)
            hit_idx = np.empty(capacity, dtype=np.int32)
            hit_sig = np.empty(capacity)
        else:
            hit_start = hit_count = np.zeros((0, 0), dtype=np.int64)
            hit_idx = np.empty(0, dtype=np.int32)
            hit_sig = np.empty(0)
        pre = np.zeros((h, w, 3))
        t_final = np.ones((h, w))
        n_hits = _numba.forward_tiles(
            h, w, tile, offsets, ids, proj.mean2d, proj.inv_abc,
            proj.alpha_eff, proj.colors, bg, options.early_stop,
            options.cutoff, pre, t_final, 1 if record else 0,
            hit_start, hit_count, hit_idx, hit_sig)
        if record:
            hits = (hit_start, hit_count, hit_idx[:n_hits].copy(),
                    hit_sig[:n_hits].copy())
    else:
        from . import _numpy
        pre, t_final = _numpy.forward_splats(
            h, w, boxes, proj.mean2d, proj.inv_abc, proj.alpha_eff,
            proj.colors, bg, options.early_stop, options.cutoff)

    state = RenderState(scene.count, scene.sh_basis, camera, proj, options,
                        boxes, pre, t_final, bg.copy(), hits)
    return np.clip(pre, 0.0, 1.0), state


def render_all_levels(scene, camera, options=None):
    """The accumulated-level render set (one full-resolution image per level)."""
    return [render_level(scene, camera, k, options)
            for k in range(1, scene.num_levels + 1)]


def render_backward(state, upstream_grad, scene):
    """Analytic gradients of the clamped render w.r.t. scene parameters.

    Gradients are zero where the pre-clamp image fell outside [0, 1]
    (straight-through clamp). Also accumulates per-Gaussian screen-space
    position gradient magnitudes for adaptive density control.
    """
    proj = state.proj
    grads = RenderGrads.zeros(state.scene_count, state.sh_basis)
    if proj.idx.size == 0:
        return grads
    upstream_grad = np.asarray(upstream_grad, dtype=np.float64)
    if upstream_grad.shape != state.pre_clamp.shape:
        raise ValueError("upstream gradient shape mismatch")
    mask = (state.pre_clamp >= 0.0) & (state.pre_clamp <= 1.0)
    grad_img = np.where(mask, upstream_grad, 0.0)

    m = proj.idx.size
    g_color = np.zeros((m, 3))
    g_mean = np.zeros((m, 2))
    g_quad = np.zeros((m, 3))
    g_alpha_eff = np.zeros(m)
    h, w = state.camera.height, state.camera.width
    options = state.options

    if options.backend_name() == "numba":
        from . import _numba
        hit_start, hit_count, hit_idx, hit_sig = state.hits
        g_alpha_gauss = np.zeros(m)
        _numba.backward_tiles(h, w, hit_start, hit_count, hit_idx, hit_sig,
                              proj.mean2d, proj.inv_abc, proj.colors,
                              state.background, grad_img,
                              g_color, g_mean, g_quad, g_alpha_gauss)
        # stored sigma = alpha_eff * gauss, so d/d(alpha_eff) = sum/alpha_eff
        np.divide(g_alpha_gauss, proj.alpha_eff, out=g_alpha_eff,
                  where=proj.alpha_eff > 0.0)
    else:
        from . import _numpy
        _numpy.backward_splats(h, w, state.bboxes, proj.mean2d, proj.inv_abc,
                               proj.alpha_eff, proj.colors, state.background,
                               options.early_stop, options.cutoff, grad_img,
                               g_color, g_mean, g_quad, g_alpha_eff)

    _chain_to_parameters(state, scene, g_color, g_mean, g_quad, g_alpha_eff, grads)
    return grads


def _chain_to_parameters(state, scene, g_color, g_mean, g_quad, g_alpha_eff, grads):
    proj = state.proj
    cam = state.camera
    idx = proj.idx
    m = idx.size

    # inverse screen covariance -> blended screen covariance
    a = proj.inv_abc[:, 0]
    b = proj.inv_abc[:, 1]
    c = proj.inv_abc[:, 2]
    inv_mat = np.empty((m, 2, 2))
    inv_mat[:, 0, 0] = a
    inv_mat[:, 0, 1] = b
    inv_mat[:, 1, 0] = b
    inv_mat[:, 1, 1] = c
    g_inv = np.empty((m, 2, 2))
    g_inv[:, 0, 0] = g_quad[:, 0]
    g_inv[:, 0, 1] = g_quad[:, 1]
    g_inv[:, 1, 0] = g_quad[:, 1]
    g_inv[:, 1, 1] = g_quad[:, 2]
    g_sigma = -inv_mat @ g_inv @ inv_mat  # d(inv) = -inv dSigma inv

    # opacity: alpha_eff = sigmoid(logit) * aa_scale
    g_alpha_sig = g_alpha_eff * proj.aa_scale
    g_logit = g_alpha_sig * proj.alpha_sig * (1.0 - proj.alpha_sig)
    np.add.at(grads.d_opacity_logits, idx, g_logit)

    if state.options.aa_opacity:
        g_aa = g_alpha_eff * proj.alpha_sig
        # d log aa = 0.5 (inv(Sigma_pre) - inv(Sigma_blend)) : dSigma_pre
        det_pre = (proj.sigma_pre[:, 0, 0] * proj.sigma_pre[:, 1, 1]
                   - proj.sigma_pre[:, 0, 1] ** 2)
        safe = det_pre > 1e-300
        inv_pre = np.zeros_like(proj.sigma_pre)
        dp = np.where(safe, det_pre, 1.0)
        inv_pre[:, 0, 0] = proj.sigma_pre[:, 1, 1] / dp
        inv_pre[:, 1, 1] = proj.sigma_pre[:, 0, 0] / dp
        inv_pre[:, 0, 1] = -proj.sigma_pre[:, 0, 1] / dp
        inv_pre[:, 1, 0] = inv_pre[:, 0, 1]
        coef = np.where(safe, 0.5 * g_aa * proj.aa_scale, 0.0)
        g_sigma = g_sigma + coef[:, None, None] * (inv_pre - inv_mat)

    g_sigma = 0.5 * (g_sigma + np.swapaxes(g_sigma, 1, 2))

    # Sigma_pre = M Sigma3 M^T
    mt = np.swapaxes(proj.m_mat, 1, 2)
    g_cov3d = mt @ g_sigma @ proj.m_mat
    g_m = 2.0 * g_sigma @ proj.m_mat @ proj.cov3d
    g_jac = g_m @ cam.rotation.T

    # projection jacobian and screen mean -> camera-space position
    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    g_pcam = np.zeros((m, 3))
    g_pcam[:, 0] = (g_jac[:, 0, 2] * (-cam.fx / z ** 2)
                    + g_mean[:, 0] * cam.fx / z)
    g_pcam[:, 1] = (g_jac[:, 1, 2] * (-cam.fy / z ** 2)
                    + g_mean[:, 1] * cam.fy / z)
    g_pcam[:, 2] = (g_jac[:, 0, 0] * (-cam.fx / z ** 2)
                    + g_jac[:, 1, 1] * (-cam.fy / z ** 2)
                    + g_jac[:, 0, 2] * (2.0 * cam.fx * x / z ** 3)
                    + g_jac[:, 1, 2] * (2.0 * cam.fy * y / z ** 3)
                    - g_mean[:, 0] * cam.fx * x / z ** 2
                    - g_mean[:, 1] * cam.fy * y / z ** 2)
    g_pos = g_pcam @ cam.rotation

    # color path: SH coefficients and the view-direction dependence
    factor = np.where(proj.levels >= 2, 2.0, 1.0)
    g_raw = g_color * factor[:, None]
    sh = scene.sh_coeffs[idx]
    from ..model import SH_C0
    g_sh = np.zeros((m, 3, scene.sh_basis))
    g_sh[:, :, 0] = g_raw * SH_C0
    if scene.sh_basis == 4:
        dx, dy, dz = proj.dirs[:, 0], proj.dirs[:, 1], proj.dirs[:, 2]
        g_sh[:, :, 1] = -SH_C1 * dy[:, None] * g_raw
        g_sh[:, :, 2] = SH_C1 * dz[:, None] * g_raw
        g_sh[:, :, 3] = -SH_C1 * dx[:, None] * g_raw
        g_dir = np.stack([
            np.sum(g_raw * (-SH_C1) * sh[:, :, 3], axis=1),
            np.sum(g_raw * (-SH_C1) * sh[:, :, 1], axis=1),
            np.sum(g_raw * SH_C1 * sh[:, :, 2], axis=1)], axis=1)
        proj_perp = g_dir - proj.dirs * np.sum(g_dir * proj.dirs, axis=1, keepdims=True)
        g_pos = g_pos + proj_perp / proj.view_dist[:, None]
    np.add.at(grads.d_sh, idx, g_sh)
    np.add.at(grads.d_positions, idx, g_pos)

    # Sigma3 = R diag(exp(2 ls)) R^T
    rot = quaternion_to_rotation(scene.quaternions[idx])
    d2 = np.exp(2.0 * scene.log_scales[idx])
    inner = np.einsum("mji,mjk,mkl->mil", rot, g_cov3d, rot)
    g_ls = 2.0 * d2 * np.einsum("mii->mi", inner)
    np.add.at(grads.d_log_scales, idx, g_ls)

    g_rot = 2.0 * np.einsum("mij,mjk,mk->mik", g_cov3d, rot, d2)
    g_qhat = _rotation_quaternion_backward(scene.quaternions[idx], g_rot)
    q = scene.quaternions[idx]
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qhat = q / norm
    g_q = (g_qhat - qhat * np.sum(g_qhat * qhat, axis=1, keepdims=True)) / norm
    np.add.at(grads.d_quaternions, idx, g_q)

    np.add.at(grads.screen_grad_norm, idx, np.linalg.norm(g_mean, axis=1))
    np.add.at(grads.screen_grad_hits, idx, 1.0)


def _rotation_quaternion_backward(q, g_rot):
    """Gradient w.r.t. the *normalized* quaternion of R(q^hat) : g_rot."""
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    zero = np.zeros_like(w)
    drdq = np.empty((q.shape[0], 4, 3, 3))
    drdq[:, 0] = 2.0 * np.stack([
        np.stack([zero, -z, y], axis=-1),
        np.stack([z, zero, -x], axis=-1),
        np.stack([-y, x, zero], axis=-1)], axis=-2)
    drdq[:, 1] = 2.0 * np.stack([
        np.stack([zero, y, z], axis=-1),
        np.stack([y, -2 * x, -w], axis=-1),
        np.stack([z, w, -2 * x], axis=-1)], axis=-2)
    drdq[:, 2] = 2.0 * np.stack([
        np.stack([-2 * y, x, w], axis=-1),
        np.stack([x, zero, z], axis=-1),
        np.stack([-w, z, -2 * y], axis=-1)], axis=-2)
    drdq[:, 3] = 2.0 * np.stack([
        np.stack([-2 * z, -w, x], axis=-1),
        np.stack([w, -2 * z, y], axis=-1),
        np.stack([x, y, zero], axis=-1)], axis=-2)
    return np.einsum("mqij,mij->mq", drdq, g_rot)
