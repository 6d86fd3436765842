"""Pure-numpy voxel-grid kernels (fallback backend).

Math contract shared with the compiled backend in ``_gridcore.pyx``:

* the grid stores raw (unsquashed) values, channel 0 = density, 1..3 = color;
* vertices span the bounding box inclusively, cell size = extent / (res - 1);
* queries trilinearly interpolate raw values, then squash: density through a
  softplus, color channels through a sigmoid;
* queries outside the box are empty space: zero outputs, zero gradients;
* corner accumulation order is fixed (x-bit, y-bit, z-bit lexicographic) so
  both backends agree to the last few ulps.
"""
import numpy as np

BACKEND_NAME = "numpy"

# (bx, by, bz) corner offsets, lexicographic
_CORNERS = [(bx, by, bz) for bx in (0, 1) for by in (0, 1) for bz in (0, 1)]


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _locate(raw_shape, bmin, bmax, pts):
    """Cell indices, fractional offsets, and inside mask for query points."""
    res = np.array(raw_shape[1:], dtype=np.int64)
    csize = (bmax - bmin) / (res - 1)
    inside = np.logical_and(pts >= bmin, pts <= bmax).all(axis=1)
    u = (pts - bmin) / csize
    i = np.clip(np.floor(u).astype(np.int64), 0, res - 2)
    f = u - i
    return res, csize, inside, i, f


def _corner_weights(f, bits):
    bx, by, bz = bits
    wx = f[:, 0] if bx else 1.0 - f[:, 0]
    wy = f[:, 1] if by else 1.0 - f[:, 1]
    wz = f[:, 2] if bz else 1.0 - f[:, 2]
    return (wx * wy) * wz


def _corner_lin(i, bits, res):
    bx, by, bz = bits
    return ((i[:, 0] + bx) * res[1] + (i[:, 1] + by)) * res[2] + (i[:, 2] + bz)


def grid_query(raw, bmin, bmax, pts):
    """Trilinear field query: returns (sigma (N,), rgb (N, 3))."""
    n = pts.shape[0]
    sigma = np.zeros(n, dtype=np.float64)
    rgb = np.zeros((n, 3), dtype=np.float64)
    res, _, inside, i, f = _locate(raw.shape, bmin, bmax, pts)
    if not inside.any():
        return sigma, rgb
    i, f = i[inside], f[inside]
    flat = raw.reshape(4, -1)
    acc = np.zeros((4, i.shape[0]), dtype=np.float64)
    for bits in _CORNERS:
        w = _corner_weights(f, bits)
        lin = _corner_lin(i, bits, res)
        acc += w * flat[:, lin]
    sigma[inside] = softplus(acc[0])
    rgb[inside] = sigmoid(acc[1:4]).T
    return sigma, rgb


def grid_query_bwd(raw, bmin, bmax, pts, up_sigma, up_rgb, grad):
    """Accumulate d(up_sigma*sigma + up_rgb.rgb)/d(raw) into grad (in place)."""
    res, _, inside, i, f = _locate(raw.shape, bmin, bmax, pts)
    if not inside.any():
        return
    i, f = i[inside], f[inside]
    us = up_sigma[inside]
    uc = up_rgb[inside]
    flat = raw.reshape(4, -1)
    gflat = grad.reshape(4, -1)
    acc = np.zeros((4, i.shape[0]), dtype=np.float64)
    weights = []
    lins = []
    for bits in _CORNERS:
        w = _corner_weights(f, bits)
        lin = _corner_lin(i, bits, res)
        acc += w * flat[:, lin]
        weights.append(w)
        lins.append(lin)
    # chain through the output squashing; the squash derivative is shared by
    # all 8 corners of a query
    d_raw = np.empty_like(acc)
    d_raw[0] = us * sigmoid(acc[0])
    s = sigmoid(acc[1:4])
    d_raw[1:4] = uc.T * (s * (1.0 - s))
    for w, lin in zip(weights, lins):
        contrib = w * d_raw
        for ch in range(4):
            np.add.at(gflat[ch], lin, contrib[ch])


def grid_density_grad(raw, bmin, bmax, pts):
    """Spatial density gradient d(sigma)/d(x): analytic within each cell."""
    n = pts.shape[0]
    out = np.zeros((n, 3), dtype=np.float64)
    res, csize, inside, i, f = _locate(raw.shape, bmin, bmax, pts)
    if not inside.any():
        return out
    i, f = i[inside], f[inside]
    flat0 = raw.reshape(4, -1)[0]
    acc0 = np.zeros(i.shape[0], dtype=np.float64)
    g_raw = np.zeros((i.shape[0], 3), dtype=np.float64)
    for bits in _CORNERS:
        lin = _corner_lin(i, bits, res)
        v = flat0[lin]
        w = _corner_weights(f, bits)
        acc0 += w * v
        for dw, axis in _weight_gradients(f, bits, csize):
            g_raw[:, axis] += dw * v
    out[inside] = sigmoid(acc0)[:, None] * g_raw
    return out


def grid_density_grad_bwd(raw, bmin, bmax, pts, up_g, grad):
    """Accumulate d(up_g . grad_sigma)/d(raw density) into grad channel 0.

    Second-order structure of the trilinear interpolant composed with the
    softplus: d g / d theta_v = softplus''(raw) * w_v * grad_raw
    + softplus'(raw) * grad_w_v.
    """
    res, csize, inside, i, f = _locate(raw.shape, bmin, bmax, pts)
    if not inside.any():
        return
    i, f = i[inside], f[inside]
    ug = up_g[inside]
    flat0 = raw.reshape(4, -1)[0]
    gflat0 = grad.reshape(4, -1)[0]
    acc0 = np.zeros(i.shape[0], dtype=np.float64)
    g_raw = np.zeros((i.shape[0], 3), dtype=np.float64)
    weights = []
    lins = []
    dws = []
    for bits in _CORNERS:
        lin = _corner_lin(i, bits, res)
        v = flat0[lin]
        w = _corner_weights(f, bits)
        acc0 += w * v
        per_axis = np.zeros((i.shape[0], 3), dtype=np.float64)
        for dw, axis in _weight_gradients(f, bits, csize):
            g_raw[:, axis] += dw * v
            per_axis[:, axis] = dw
        weights.append(w)
        lins.append(lin)
        dws.append(per_axis)
    s1 = sigmoid(acc0)            # softplus'
    s2 = s1 * (1.0 - s1)          # softplus''
    ug_graw = (ug * g_raw).sum(axis=1)
    for w, lin, dw in zip(weights, lins, dws):
        contrib = s2 * w * ug_graw + s1 * (ug * dw).sum(axis=1)
        np.add.at(gflat0, lin, contrib)


def _weight_gradients(f, bits, csize):
    """Per-axis spatial derivatives of one corner's trilinear weight."""
    bx, by, bz = bits
    wx = f[:, 0] if bx else 1.0 - f[:, 0]
    wy = f[:, 1] if by else 1.0 - f[:, 1]
    wz = f[:, 2] if bz else 1.0 - f[:, 2]
    sx = 1.0 if bx else -1.0
    sy = 1.0 if by else -1.0
    sz = 1.0 if bz else -1.0
    yield (sx / csize[0]) * (wy * wz), 0
    yield (sy / csize[1]) * (wx * wz), 1
    yield (sz / csize[2]) * (wx * wy), 2
