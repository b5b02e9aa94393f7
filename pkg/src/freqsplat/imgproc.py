"""Image-space frequency machinery.

Bilinear resampling, pyramid REDUCE, DFT magnitude discrepancy, SSIM, and
the composed spatial discrepancy used by the training loss.  Images are
row-major float arrays of shape (H, W, 3); values are nominally in [0, 1]
but intermediates (residual renders) may fall outside.

All loss-style functions come in pairs: ``f(...)`` returns the scalar,
``f_grad(...)`` additionally returns the analytic gradient with respect to
the rendered image argument.
"""

import numpy as np
from PIL import Image
from scipy import ndimage

# Burt-Adelson 5-tap kernel (a = 0.375), the canonical pyramid kernel.
DEFAULT_REDUCE_KERNEL = np.array([0.0625, 0.25, 0.375, 0.25, 0.0625])

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


class DimensionError(ValueError):
    """Image dimensions violate an operation's divisibility/shape contract."""


def _check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected (H, W, 3) image, got shape {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise DimensionError("image must be at least 1x1")
    return img


# ---------------------------------------------------------------------------
# bilinear resampling (half-pixel-center convention)
# ---------------------------------------------------------------------------

def _down2_axis(x, axis):
    n = x.shape[axis]
    if n % 2 != 0:
        raise DimensionError(f"cannot halve odd dimension {n}")
    x = np.moveaxis(x, axis, 0)
    y = 0.5 * (x[0::2] + x[1::2])
    return np.moveaxis(y, 0, axis)


def _up2_axis(x, axis):
    # Output sample j sits at input coordinate j/2 - 0.25 (half-pixel
    # centers), clamped at the border.
    x = np.moveaxis(x, axis, 0)
    n = x.shape[0]
    left = np.concatenate([x[:1], x[:-1]], axis=0)
    right = np.concatenate([x[1:], x[-1:]], axis=0)
    y = np.empty((2 * n,) + x.shape[1:], dtype=x.dtype)
    y[0::2] = 0.75 * x + 0.25 * left
    y[1::2] = 0.75 * x + 0.25 * right
    return np.moveaxis(y, 0, axis)


def resample_bilinear(img, factor, times=1):
    """Repeatedly halve (factor 0.5) or double (factor 2.0) an image.

    Halving a dimension that is not divisible by 2 raises DimensionError;
    training resolutions are constrained so this never happens mid-run.
    """
    img = _check_image(img)
    if times < 0:
        raise ValueError("times must be >= 0")
    if factor not in (0.5, 2.0):
        raise ValueError("factor must be 0.5 or 2.0")
    for _ in range(times):
        if factor == 0.5:
            img = _down2_axis(_down2_axis(img, 0), 1)
        else:
            img = _up2_axis(_up2_axis(img, 0), 1)
    return img


def lowpass_gt(img, levels, k):
    """Low-pass reference for accumulated level k of a `levels`-deep pyramid.

    Downsamples (levels - k) times and upsamples back, so the result keeps
    the source resolution but only the frequency content of the subsampled
    image.
    """
    if not (1 <= k <= levels):
        raise ValueError(f"level index {k} outside [1, {levels}]")
    down = resample_bilinear(img, 0.5, levels - k)
    return resample_bilinear(down, 2.0, levels - k)


# ---------------------------------------------------------------------------
# reflect-boundary separable convolution and its exact adjoint
# ---------------------------------------------------------------------------

def _mirror_indices(n, pad):
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def _conv1_reflect(x, kernel, axis):
    pad = len(kernel) // 2
    if x.shape[axis] > pad:
        # ndimage "mirror" is exactly the whole-sample reflection used here;
        # convolve1d flips its kernel, so reverse it to keep correlation order
        return ndimage.convolve1d(x, np.asarray(kernel)[::-1], axis=axis,
                                  mode="mirror")
    x = np.moveaxis(x, axis, 0)
    xm = x[_mirror_indices(x.shape[0], pad)]
    y = np.zeros_like(x)
    for j, kj in enumerate(kernel):
        y += kj * xm[j:j + x.shape[0]]
    return np.moveaxis(y, 0, axis)


def _conv1_reflect_adjoint(g, kernel, axis):
    pad = len(kernel) // 2
    g = np.moveaxis(g, axis, 0)
    n = g.shape[0]
    gm = np.zeros((n + 2 * pad,) + g.shape[1:], dtype=g.dtype)
    for j, kj in enumerate(kernel):
        gm[j:j + n] += kj * g
    if n > pad:
        # fold the mirrored pad rows back in: row -j maps to j, row
        # n-1+j maps to n-1-j (whole-sample reflection)
        gx = gm[pad:pad + n].copy()
        gx[1:1 + pad] += gm[pad - 1::-1]
        gx[n - 1 - pad:n - 1] += gm[:pad + n - 1:-1]
    else:
        gx = np.zeros_like(g)
        np.add.at(gx, _mirror_indices(n, pad), gm)
    return np.moveaxis(gx, 0, axis)


def _blur_sep(img, kernel):
    return _conv1_reflect(_conv1_reflect(img, kernel, 0), kernel, 1)


def _blur_sep_adjoint(grad, kernel):
    return _conv1_reflect_adjoint(_conv1_reflect_adjoint(grad, kernel, 1), kernel, 0)


# ---------------------------------------------------------------------------
# REDUCE
# ---------------------------------------------------------------------------

def reduce_image(img, kernel=None):
    """Pyramid REDUCE: separable 5-tap blur, then keep even rows/columns."""
    img = _check_image(img)
    if kernel is None:
        kernel = DEFAULT_REDUCE_KERNEL
    h, w = img.shape[:2]
    if h < 2 or w < 2 or h % 2 or w % 2:
        raise DimensionError(f"REDUCE needs even dimensions >= 2, got {h}x{w}")
    return _blur_sep(img, kernel)[0::2, 0::2]


def reduce_image_adjoint(grad, out_shape, kernel=None):
    """Adjoint of reduce_image for an input of shape out_shape."""
    if kernel is None:
        kernel = DEFAULT_REDUCE_KERNEL
    up = np.zeros(out_shape, dtype=np.float64)
    up[0::2, 0::2] = grad
    return _blur_sep_adjoint(up, kernel)


# ---------------------------------------------------------------------------
# DFT magnitude discrepancy
# ---------------------------------------------------------------------------

def dft_discrepancy(a, b):
    """Mean absolute difference of unnormalized DFT magnitudes.

    Averaged over the U*V frequency bins and the 3 channels.
    """
    a = _check_image(a)
    b = _check_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    fa = np.abs(np.fft.fft2(a, axes=(0, 1)))
    fb = np.abs(np.fft.fft2(b, axes=(0, 1)))
    uv = a.shape[0] * a.shape[1]
    return float(np.sum(np.abs(fa - fb)) / (uv * 3))


def dft_discrepancy_grad(a, b):
    """dft_discrepancy plus its gradient with respect to ``b``.

    Subgradient 0 is used at zero magnitude.
    """
    a = _check_image(a)
    b = _check_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    fa = np.fft.fft2(a, axes=(0, 1))
    fb = np.fft.fft2(b, axes=(0, 1))
    ma = np.abs(fa)
    mb = np.abs(fb)
    uv = a.shape[0] * a.shape[1]
    val = float(np.sum(np.abs(ma - mb)) / (uv * 3))
    sgn = np.sign(mb - ma)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(mb > 0, np.conj(fb) / np.where(mb > 0, mb, 1.0), 0.0)
    grad = np.real(np.fft.fft2(sgn * unit, axes=(0, 1))) / (uv * 3)
    return val, grad


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def _ssim_kernel():
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2
    k = np.exp(-0.5 * (r / SSIM_SIGMA) ** 2)
    return k / k.sum()


def _ssim_terms(a, b):
    k = _ssim_kernel()
    mu_a = _blur_sep(a, k)
    mu_b = _blur_sep(b, k)
    t_aa = _blur_sep(a * a, k)
    t_bb = _blur_sep(b * b, k)
    t_ab = _blur_sep(a * b, k)
    var_a = t_aa - mu_a ** 2
    var_b = t_bb - mu_b ** 2
    cov = t_ab - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    return mu_a, mu_b, a1, a2, b1, b2


def ssim(a, b):
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), [0,1] stabilizers."""
    a = _check_image(a)
    b = _check_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise DimensionError(f"image too small for {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    _, _, a1, a2, b1, b2 = _ssim_terms(a, b)
    return float(np.mean((a1 * a2) / (b1 * b2)))


def ssim_grad(a, b):
    """ssim(a, b) plus the gradient of the mean map with respect to ``b``."""
    a = _check_image(a)
    b = _check_image(b)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise DimensionError(f"image too small for {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")
    k = _ssim_kernel()
    mu_a, mu_b, a1, a2, b1, b2 = _ssim_terms(a, b)
    val = float(np.mean((a1 * a2) / (b1 * b2)))

    n = a.size
    bb = b1 * b2
    # Partials of the SSIM map with respect to the blurred moments of b.
    d_mu_b = (2 * mu_a * a2 / bb
              - 2 * mu_b * a1 * a2 / (b1 * bb)
              - 2 * mu_a * a1 / bb
              + 2 * mu_b * a1 * a2 / (b2 * bb))
    d_t_bb = -a1 * a2 / (b2 * bb)
    d_t_ab = 2 * a1 / bb
    grad = (_blur_sep_adjoint(d_mu_b, k)
            + 2 * b * _blur_sep_adjoint(d_t_bb, k)
            + a * _blur_sep_adjoint(d_t_ab, k)) / n
    return val, grad


# ---------------------------------------------------------------------------
# composed spatial discrepancy
# ---------------------------------------------------------------------------

def spatial_discrepancy(gt, render, lambda_ssim, reduce_times=0, kernel=None):
    """REDUCE both images ``reduce_times`` times, then L1 + D-SSIM mix."""
    val, _ = _spatial_core(gt, render, lambda_ssim, reduce_times, kernel, want_grad=False)
    return val


def spatial_discrepancy_grad(gt, render, lambda_ssim, reduce_times=0, kernel=None):
    """spatial_discrepancy plus its gradient with respect to ``render``."""
    return _spatial_core(gt, render, lambda_ssim, reduce_times, kernel, want_grad=True)


def _spatial_core(gt, render, lambda_ssim, reduce_times, kernel, want_grad):
    gt = _check_image(gt)
    render = _check_image(render)
    if gt.shape != render.shape:
        raise DimensionError(f"shape mismatch {gt.shape} vs {render.shape}")
    shapes = []
    g, r = gt, render
    for _ in range(reduce_times):
        shapes.append(r.shape)
        g = reduce_image(g, kernel)
        r = reduce_image(r, kernel)
    diff = r - g
    l1 = float(np.mean(np.abs(diff)))
    val = (1.0 - lambda_ssim) * l1
    grad = None
    if want_grad:
        grad = (1.0 - lambda_ssim) * np.sign(diff) / diff.size
    if lambda_ssim != 0.0:
        if want_grad:
            s, gs = ssim_grad(g, r)
            grad = grad + lambda_ssim * (-gs)
        else:
            s = ssim(g, r)
        val += lambda_ssim * (1.0 - s)
    if not want_grad:
        return val, None
    for shape in reversed(shapes):
        grad = reduce_image_adjoint(grad, shape, kernel)
    return val, grad


# ---------------------------------------------------------------------------
# metrics and PNG I/O
# ---------------------------------------------------------------------------

def psnr(a, b):
    mse = float(np.mean((np.asarray(a, float) - np.asarray(b, float)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def load_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_png(img, path):
    img = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    q = np.round(img * 255.0).astype(np.uint8)
    Image.fromarray(q, mode="RGB").save(path)
