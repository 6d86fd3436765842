"""Edge-strength extraction and per-pixel edge indicators.

Pipeline: grayscale -> Canny (blur, Sobel, non-maximum suppression,
hysteresis) -> binarize at tau_e -> 3x3 dilation of the edge set -> indicator
with e = 1 on regularizable non-edge pixels and e = 0 on (dilated) edges.
Externally produced edge-strength maps (e.g. from a learned detector) enter
the same binarize/dilate/indicator tail via load_external_edge_map.

Grayscale images use 8-bit semantics: values in [0, 255] stored as float64.
All functions are pure; indicator maps are meant to be computed once per
training image and cached.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputDomainError

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# NMS neighbor offsets (dy, dx) per quantized gradient direction; the first
# neighbor is compared strictly, the second non-strictly, so a two-pixel
# plateau keeps exactly one pixel
_NMS_NEIGHBORS = {
    0: ((0, -1), (0, 1)),     # gradient ~ horizontal
    1: ((-1, -1), (1, 1)),    # ~ 45 degrees
    2: ((-1, 0), (1, 0)),     # ~ vertical
    3: ((-1, 1), (1, -1)),    # ~ 135 degrees
}


@dataclass(frozen=True)
class EdgeIndicatorMap:
    """Per-pixel indicator: 1 = non-edge (regularizable), 0 = edge (excluded)."""

    values: np.ndarray  # (H, W) uint8 in {0, 1}

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.uint8).copy()
        if v.ndim != 2:
            raise InputDomainError("indicator map must be 2-D")
        if not np.isin(v, (0, 1)).all():
            raise InputDomainError("indicator values must be 0 or 1")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def height(self):
        return self.values.shape[0]

    def non_edge_fraction(self):
        return float(self.values.mean())


def to_grayscale(rgb):
    """Luma conversion 0.299 R + 0.587 G + 0.114 B on the [0, 255] scale."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise InputDomainError("expected an (H, W, 3) RGB image")
    if rgb.max(initial=0.0) > 255.0 + 1e-9 or rgb.min(initial=0.0) < -1e-9:
        raise InputDomainError("RGB values must be on the [0, 255] scale")
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    return LUMA_WEIGHTS[0] * r + LUMA_WEIGHTS[1] * g + LUMA_WEIGHTS[2] * b


def gaussian_kernel1d(sigma):
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(gray, sigma):
    """Separable blur with mirrored (edge-excluding) borders."""
    k = gaussian_kernel1d(sigma)
    r = (len(k) - 1) // 2
    padded = np.pad(gray, ((0, 0), (r, r)), mode="reflect")
    out = np.zeros_like(gray, dtype=np.float64)
    w = gray.shape[1]
    for j, kj in enumerate(k):
        out += kj * padded[:, j:j + w]
    padded = np.pad(out, ((r, r), (0, 0)), mode="reflect")
    out = np.zeros_like(gray, dtype=np.float64)
    h = gray.shape[0]
    for j, kj in enumerate(k):
        out += kj * padded[j:j + h, :]
    return out


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def sobel_gradients(img):
    """3x3 Sobel gx (rightward) and gy (downward) with mirrored borders."""
    padded = np.pad(img, 1, mode="reflect")
    h, w = img.shape
    gx = np.zeros_like(img, dtype=np.float64)
    gy = np.zeros_like(img, dtype=np.float64)
    for dy in range(3):
        for dx in range(3):
            window = padded[dy:dy + h, dx:dx + w]
            if _SOBEL_X[dy, dx] != 0.0:
                gx += _SOBEL_X[dy, dx] * window
            if _SOBEL_Y[dy, dx] != 0.0:
                gy += _SOBEL_Y[dy, dx] * window
    return gx, gy


def quantize_directions(gx, gy):
    """Gradient direction folded to [0, pi) and quantized to 4 bins."""
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    return np.floor(theta / (np.pi / 4.0) + 0.5).astype(np.int64) % 4


def non_maximum_suppression(mag, bins):
    """Keep local maxima along the gradient direction; border row/col dropped."""
    h, w = mag.shape
    padded = np.pad(mag, 1)
    keep = np.zeros((h, w), dtype=bool)
    for b, ((ay, ax), (by, bx)) in _NMS_NEIGHBORS.items():
        na = padded[1 + ay:1 + ay + h, 1 + ax:1 + ax + w]
        nb = padded[1 + by:1 + by + h, 1 + bx:1 + bx + w]
        keep |= (bins == b) & (mag > na) & (mag >= nb)
    keep[0, :] = keep[-1, :] = False
    keep[:, 0] = keep[:, -1] = False
    return np.where(keep, mag, 0.0)


def hysteresis(mag, low, high):
    """Double-threshold hysteresis, 8-connected; returns a boolean edge mask."""
    strong = mag >= high
    candidate = mag >= low
    current = strong.copy()
    while True:
        grown = _dilate_bool(current) & candidate
        if (grown == current).all():
            return current
        current = grown


def _dilate_bool(mask):
    padded = np.pad(mask, 1)
    h, w = mask.shape
    out = np.zeros_like(mask)
    for dy in range(3):
        for dx in range(3):
            out |= padded[dy:dy + h, dx:dx + w]
    return out


def canny(gray, sigma=1.4, low=50.0, high=150.0):
    """Canny edge strength: 255.0 on edge pixels, 0.0 elsewhere."""
    if not 0.0 < low <= high:
        raise InputDomainError("need 0 < low <= high hysteresis thresholds")
    if sigma <= 0:
        raise InputDomainError("blur sigma must be positive")
    gray = np.asarray(gray, dtype=np.float64)
    blurred = gaussian_blur(gray, sigma)
    gx, gy = sobel_gradients(blurred)
    mag = np.hypot(gx, gy)
    suppressed = non_maximum_suppression(mag, quantize_directions(gx, gy))
    edges = hysteresis(suppressed, low, high)
    return np.where(edges, 255.0, 0.0)


def binarize(strength, tau_e):
    """B = 1 where the edge strength meets the threshold (inclusive)."""
    return (np.asarray(strength, dtype=np.float64) >= tau_e).astype(np.uint8)


def dilate3x3(b):
    """Binary dilation with the all-ones 3x3 kernel, clipped at the borders."""
    b = np.asarray(b, dtype=np.uint8)
    padded = np.pad(b, 1)
    h, w = b.shape
    out = np.zeros_like(b)
    for dy in range(3):
        for dx in range(3):
            np.maximum(out, padded[dy:dy + h, dx:dx + w], out=out)
    return out


def to_indicator(b_dilated) -> EdgeIndicatorMap:
    """Complement the dilated edge set: edges get e = 0."""
    return EdgeIndicatorMap(values=1 - np.asarray(b_dilated, dtype=np.uint8))


def indicator_from_strength(strength, tau_e) -> EdgeIndicatorMap:
    return to_indicator(dilate3x3(binarize(strength, tau_e)))


def edge_strength_from_rgb01(img01, sigma=1.4, low=50.0, high=150.0):
    """Canny strength map for an RGB image with values in [0, 1]."""
    return canny(to_grayscale(np.asarray(img01, dtype=np.float64) * 255.0),
                 sigma=sigma, low=low, high=high)


def load_external_edge_map(path, tau_e, expected_size=None) -> EdgeIndicatorMap:
    """Read an 8-bit grayscale edge-strength image and derive the indicator."""
    from .dataio import load_png

    arr = load_png(path)
    if arr.ndim == 3:
        arr = to_grayscale(arr.astype(np.float64))
    if expected_size is not None:
        w, h = expected_size
        if arr.shape != (h, w):
            raise ConfigurationError(
                f"edge map {path} is {arr.shape[1]}x{arr.shape[0]}, dataset images are {w}x{h}")
    return indicator_from_strength(arr.astype(np.float64), tau_e)
