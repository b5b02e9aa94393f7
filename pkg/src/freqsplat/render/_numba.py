"""Numba kernels for the tiled rasterizer (forward + backward).

Per-pixel math is kept line-for-line identical to the numpy fallback in
_numpy.py so both backends agree to floating-point rounding. The forward
kernel can record the per-pixel contributor stream (splat id + sigma), which
lets the backward kernel run without re-evaluating any Gaussian.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _tile_hits_circle(tx, ty, tile, cx, cy, r2):
    """Does the circumscribed circle of a splat overlap the tile square?"""
    x0 = tx * tile
    y0 = ty * tile
    dx = 0.0
    if cx < x0:
        dx = x0 - cx
    elif cx > x0 + tile:
        dx = cx - (x0 + tile)
    dy = 0.0
    if cy < y0:
        dy = y0 - cy
    elif cy > y0 + tile:
        dy = cy - (y0 + tile)
    return dx * dx + dy * dy <= r2


@njit(cache=True)
def build_tile_lists(tx0, tx1, ty0, ty1, ntx, nty, tile, mean2d, radius):
    """Per-tile splat id lists; splats are already in blend order, so the
    per-tile lists inherit that order. Tiles inside a splat's bounding box
    but outside its circumscribed circle hold no contributing pixel and are
    skipped."""
    n = tx0.shape[0]
    ntiles = ntx * nty
    counts = np.zeros(ntiles, dtype=np.int64)
    for j in range(n):
        r2 = radius[j] * radius[j]
        for ty in range(ty0[j], ty1[j]):
            for tx in range(tx0[j], tx1[j]):
                if _tile_hits_circle(tx, ty, tile, mean2d[j, 0], mean2d[j, 1], r2):
                    counts[ty * ntx + tx] += 1
    offsets = np.zeros(ntiles + 1, dtype=np.int64)
    for t in range(ntiles):
        offsets[t + 1] = offsets[t] + counts[t]
    ids = np.empty(offsets[ntiles], dtype=np.int64)
    cursor = offsets[:ntiles].copy()
    for j in range(n):
        r2 = radius[j] * radius[j]
        for ty in range(ty0[j], ty1[j]):
            for tx in range(tx0[j], tx1[j]):
                if _tile_hits_circle(tx, ty, tile, mean2d[j, 0], mean2d[j, 1], r2):
                    t = ty * ntx + tx
                    ids[cursor[t]] = j
                    cursor[t] += 1
    return offsets, ids


@njit(cache=True)
def hit_capacity(height, width, tile, offsets):
    """Upper bound on recorded hits: tile list length x pixels per tile."""
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    total = 0
    for ty in range(nty):
        h = min((ty + 1) * tile, height) - ty * tile
        for tx in range(ntx):
            w = min((tx + 1) * tile, width) - tx * tile
            total += (offsets[ty * ntx + tx + 1]
                      - offsets[ty * ntx + tx]) * h * w
    return total


@njit(cache=True)
def forward_tiles(height, width, tile, offsets, ids, mean2d, inv_abc, alpha,
                  colors, bg, early_stop, cutoff, out_img, out_t,
                  record, hit_start, hit_count, hit_idx, hit_sig):
    """Front-to-back blend per tile.

    With record != 0, appends each pixel's contributing splats (in blend
    order) to hit_idx/hit_sig and stores the pixel's segment in
    hit_start/hit_count. Returns the number of recorded hits.
    """
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    max_len = 0
    for t in range(offsets.shape[0] - 1):
        if offsets[t + 1] - offsets[t] > max_len:
            max_len = offsets[t + 1] - offsets[t]
    mx = np.empty(max_len)
    my = np.empty(max_len)
    ia = np.empty(max_len)
    ib = np.empty(max_len)
    ic = np.empty(max_len)
    al = np.empty(max_len)
    c0 = np.empty(max_len)
    c1 = np.empty(max_len)
    c2 = np.empty(max_len)
    jj = np.empty(max_len, dtype=np.int64)
    cursor = 0
    for ty in range(nty):
        for tx in range(ntx):
            t = ty * ntx + tx
            lo, hi = offsets[t], offsets[t + 1]
            length = hi - lo
            for s in range(length):
                j = ids[lo + s]
                jj[s] = j
                mx[s] = mean2d[j, 0]
                my[s] = mean2d[j, 1]
                ia[s] = inv_abc[j, 0]
                ib[s] = inv_abc[j, 1]
                ic[s] = inv_abc[j, 2]
                al[s] = alpha[j]
                c0[s] = colors[j, 0]
                c1[s] = colors[j, 1]
                c2[s] = colors[j, 2]
            for py in range(ty * tile, min((ty + 1) * tile, height)):
                for px in range(tx * tile, min((tx + 1) * tile, width)):
                    trans = 1.0
                    r = 0.0
                    g = 0.0
                    b = 0.0
                    if record != 0:
                        hit_start[py, px] = cursor
                    for s in range(length):
                        if trans < early_stop:
                            break
                        dx = px + 0.5 - mx[s]
                        dy = py + 0.5 - my[s]
                        m2 = (ia[s] * dx * dx + 2.0 * ib[s] * dx * dy
                              + ic[s] * dy * dy)
                        if m2 > cutoff:
                            continue
                        sig = al[s] * np.exp(-0.5 * m2)
                        w = sig * trans
                        r += c0[s] * w
                        g += c1[s] * w
                        b += c2[s] * w
                        if record != 0:
                            hit_idx[cursor] = np.int32(jj[s])
                            hit_sig[cursor] = sig
                            cursor += 1
                        trans *= 1.0 - sig
                    if record != 0:
                        hit_count[py, px] = cursor - hit_start[py, px]
                    out_img[py, px, 0] = r + bg[0] * trans
                    out_img[py, px, 1] = g + bg[1] * trans
                    out_img[py, px, 2] = b + bg[2] * trans
                    out_t[py, px] = trans
    return cursor


@njit(cache=True)
def backward_tiles(height, width, hit_start, hit_count, hit_idx, hit_sig,
                   mean2d, inv_abc, colors, bg, grad_img,
                   g_color, g_mean, g_quad, g_alpha_gauss):
    """Parameter gradients from the recorded contributor stream.

    g_alpha_gauss accumulates d/d(sigma)/alpha terms scaled by the stored
    sigma, i.e. the gradient with respect to alpha times alpha; the caller
    divides by alpha once per splat.
    """
    max_len = 0
    for py in range(height):
        for px in range(width):
            if hit_count[py, px] > max_len:
                max_len = hit_count[py, px]
    tb = np.empty(max_len)
    for py in range(height):
        for px in range(width):
            u0 = grad_img[py, px, 0]
            u1 = grad_img[py, px, 1]
            u2 = grad_img[py, px, 2]
            if u0 == 0.0 and u1 == 0.0 and u2 == 0.0:
                continue
            start = hit_start[py, px]
            n_hit = hit_count[py, px]
            trans = 1.0
            for h in range(n_hit):
                tb[h] = trans
                trans *= 1.0 - hit_sig[start + h]
            # suffix color behind each contributor, incl. background
            s0 = bg[0] * trans
            s1 = bg[1] * trans
            s2 = bg[2] * trans
            for h in range(n_hit - 1, -1, -1):
                j = hit_idx[start + h]
                sig = hit_sig[start + h]
                w = sig * tb[h]
                g_color[j, 0] += u0 * w
                g_color[j, 1] += u1 * w
                g_color[j, 2] += u2 * w
                inv1m = 1.0 / (1.0 - sig)
                dsig = (u0 * (colors[j, 0] * tb[h] - s0 * inv1m)
                        + u1 * (colors[j, 1] * tb[h] - s1 * inv1m)
                        + u2 * (colors[j, 2] * tb[h] - s2 * inv1m))
                g_alpha_gauss[j] += dsig * sig
                wq = dsig * sig * (-0.5)
                dx = px + 0.5 - mean2d[j, 0]
                dy = py + 0.5 - mean2d[j, 1]
                g_quad[j, 0] += wq * dx * dx
                g_quad[j, 1] += wq * dx * dy
                g_quad[j, 2] += wq * dy * dy
                ddx = wq * 2.0 * (inv_abc[j, 0] * dx + inv_abc[j, 1] * dy)
                ddy = wq * 2.0 * (inv_abc[j, 1] * dx + inv_abc[j, 2] * dy)
                g_mean[j, 0] -= ddx
                g_mean[j, 1] -= ddy
                s0 += colors[j, 0] * w
                s1 += colors[j, 1] * w
                s2 += colors[j, 2] * w
