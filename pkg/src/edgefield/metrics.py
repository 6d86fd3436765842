"""Image quality and depth-accuracy metrics.

PSNR is reported on the [0, 1] scale (identical images get the +inf
sentinel). SSIM uses the literature-standard constants: 11x11 Gaussian window
with sigma 1.5, C1 = (0.01 L)^2, C2 = (0.03 L)^2 at L = 1, averaged over the
valid (fully-windowed) region and channels. Depth errors come in two flavors:
plain MAE over pixels with ground-truth geometry, and a boundary MAE
restricted to a 2-pixel Chebyshev band around ground-truth depth
discontinuities, which quantifies how well reconstruction preserves edges.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import InputDomainError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0


def psnr(img_a, img_b) -> float:
    """10 log10(1 / MSE) over all channels; +inf for identical images."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputDomainError("image shapes differ")
    mse = float(((a - b) ** 2).mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _ssim_window():
    r = (SSIM_WINDOW - 1) // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


def _filter_valid(img, k):
    """Separable 'valid' correlation with a 1-D window along both axes."""
    n = len(k)
    h, w = img.shape
    out = np.zeros((h, w - n + 1))
    for j, kj in enumerate(k):
        out += kj * img[:, j:j + w - n + 1]
    out2 = np.zeros((h - n + 1, w - n + 1))
    for j, kj in enumerate(k):
        out2 += kj * out[j:j + h - n + 1, :]
    return out2


def ssim(img_a, img_b) -> float:
    """Mean structural similarity over pixels and channels."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputDomainError("image shapes differ")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise InputDomainError(f"images must be at least {SSIM_WINDOW} pixels per side")
    k = _ssim_window()
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    vals = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mu_x = _filter_valid(x, k)
        mu_y = _filter_valid(y, k)
        var_x = _filter_valid(x * x, k) - mu_x * mu_x
        var_y = _filter_valid(y * y, k) - mu_y * mu_y
        cov = _filter_valid(x * y, k) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        vals.append(num / den)
    return float(np.mean(vals))


def discontinuity_mask(gt_depth, threshold):
    """Pixels where the 3x3 neighborhood range of GT depth exceeds threshold."""
    gt = np.asarray(gt_depth, dtype=np.float64)
    hi = np.full_like(gt, -np.inf)
    lo = np.full_like(gt, np.inf)
    padded = np.pad(gt, 1, mode="edge")
    h, w = gt.shape
    for dy in range(3):
        for dx in range(3):
            win = padded[dy:dy + h, dx:dx + w]
            np.maximum(hi, win, out=hi)
            np.minimum(lo, win, out=lo)
    return (hi - lo) > threshold


def _chebyshev_band(mask, radius):
    out = mask.copy()
    h, w = mask.shape
    for _ in range(radius):
        padded = np.pad(out, 1)
        grown = np.zeros_like(out)
        for dy in range(3):
            for dx in range(3):
                grown |= padded[dy:dy + h, dx:dx + w]
        out = grown
    return out


def depth_metrics(pred_depth, gt_depth, mask=None, threshold=None, band_radius=2):
    """(MAE over valid GT pixels, MAE within the discontinuity band).

    `mask` marks GT depth discontinuities; derived from `threshold` when not
    given. Pixels without GT geometry (depth 0) are excluded from both.
    """
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if pred.shape != gt.shape:
        raise InputDomainError("depth map shapes differ")
    if mask is None:
        if threshold is None:
            raise InputDomainError("need either a discontinuity mask or a threshold")
        mask = discontinuity_mask(gt, threshold)
    valid = gt > 0
    err = np.abs(pred - gt)
    mae = float(err[valid].mean()) if valid.any() else 0.0
    band = _chebyshev_band(np.asarray(mask, dtype=bool), band_radius) & valid
    boundary_mae = float(err[band].mean()) if band.any() else 0.0
    return mae, boundary_mae
