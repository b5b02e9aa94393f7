"""Pure-numpy rasterizer kernels (fallback backend).

Vectorized over pixels, looped over splats in blend order; per-pixel
semantics (cutoff, early stop, blend order) match _numba.py exactly.
"""

import numpy as np


def _windows(height, width, bbox):
    x0, x1, y0, y1 = bbox
    ys, xs = np.ogrid[y0:y1, x0:x1]
    return (slice(y0, y1), slice(x0, x1)), xs + 0.5, ys + 0.5


def forward_splats(height, width, bboxes, mean2d, inv_abc, alpha, colors, bg,
                   early_stop, cutoff, record=False):
    img = np.zeros((height, width, 3))
    trans = np.ones((height, width))
    sig_maps = [] if record else None
    for j in range(mean2d.shape[0]):
        win, xs, ys = _windows(height, width, bboxes[j])
        dx = xs - mean2d[j, 0]
        dy = ys - mean2d[j, 1]
        m2 = (inv_abc[j, 0] * dx * dx + 2.0 * inv_abc[j, 1] * dx * dy
              + inv_abc[j, 2] * dy * dy)
        tw = trans[win]
        sig = np.where((m2 <= cutoff) & (tw >= early_stop),
                       alpha[j] * np.exp(-0.5 * m2), 0.0)
        img[win] += colors[j] * (sig * tw)[..., None]
        trans[win] = tw * (1.0 - sig)
        if record:
            sig_maps.append(sig)
    img += bg * trans[..., None]
    if record:
        return img, trans, sig_maps
    return img, trans


def backward_splats(height, width, bboxes, mean2d, inv_abc, alpha, colors, bg,
                    early_stop, cutoff, grad_img,
                    g_color, g_mean, g_quad, g_alpha):
    n = mean2d.shape[0]
    _, t_final, sig_maps = forward_splats(
        height, width, bboxes, mean2d, inv_abc, alpha, colors, bg,
        early_stop, cutoff, record=True)
    trans = t_final.copy()
    suffix = bg * t_final[..., None]
    for j in range(n - 1, -1, -1):
        win, xs, ys = _windows(height, width, bboxes[j])
        sig = sig_maps[j]
        t_before = trans[win] / (1.0 - sig)
        hit = sig > 0.0
        gw = grad_img[win]
        w = sig * t_before
        g_color[j] += np.sum(gw * w[..., None], axis=(0, 1))
        inv1m = np.where(hit, 1.0 / (1.0 - sig), 0.0)
        dsig = np.sum(gw * (colors[j] * t_before[..., None]
                            - suffix[win] * inv1m[..., None]), axis=2)
        dsig = np.where(hit, dsig, 0.0)
        gauss = np.where(hit, sig / alpha[j], 0.0)
        g_alpha[j] += np.sum(dsig * gauss)
        wq = dsig * sig * (-0.5)
        dx = xs - mean2d[j, 0]
        dy = ys - mean2d[j, 1]
        g_quad[j, 0] += np.sum(wq * dx * dx)
        g_quad[j, 1] += np.sum(wq * dx * dy)
        g_quad[j, 2] += np.sum(wq * dy * dy)
        ddx = wq * 2.0 * (inv_abc[j, 0] * dx + inv_abc[j, 1] * dy)
        ddy = wq * 2.0 * (inv_abc[j, 1] * dx + inv_abc[j, 2] * dy)
        g_mean[j, 0] -= np.sum(ddx)
        g_mean[j, 1] -= np.sum(ddy)
        suffix[win] += colors[j] * w[..., None]
        trans[win] = t_before
