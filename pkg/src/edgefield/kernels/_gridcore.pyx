# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled voxel-grid kernels.

Same math contract as grid_numpy (see that module's docstring): raw-value
trilinear interpolation with softplus/sigmoid squashing, empty space outside
the box, fixed corner accumulation order. Scatter accumulation is
single-threaded, so gradients are deterministic.
"""
import numpy as np

from libc.math cimport exp, floor, log1p

BACKEND_NAME = "cython"


cdef inline double _softplus(double x) nogil:
    cdef double ax = x if x >= 0.0 else -x
    cdef double m = x if x >= 0.0 else 0.0
    return m + log1p(exp(-ax))


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef struct CellRef:
    bint inside
    long ix, iy, iz
    double fx, fy, fz


cdef inline CellRef _locate(const double[:, :, :, ::1] raw,
                            const double[::1] bmin, const double[::1] bmax,
                            const double* p) nogil:
    cdef CellRef c
    cdef long rx = raw.shape[1], ry = raw.shape[2], rz = raw.shape[3]
    cdef double cs, u
    c.inside = (p[0] >= bmin[0] and p[0] <= bmax[0] and
                p[1] >= bmin[1] and p[1] <= bmax[1] and
                p[2] >= bmin[2] and p[2] <= bmax[2])
    if not c.inside:
        c.ix = c.iy = c.iz = 0
        c.fx = c.fy = c.fz = 0.0
        return c
    cs = (bmax[0] - bmin[0]) / (rx - 1)
    u = (p[0] - bmin[0]) / cs
    c.ix = <long>floor(u)
    if c.ix < 0: c.ix = 0
    if c.ix > rx - 2: c.ix = rx - 2
    c.fx = u - c.ix
    cs = (bmax[1] - bmin[1]) / (ry - 1)
    u = (p[1] - bmin[1]) / cs
    c.iy = <long>floor(u)
    if c.iy < 0: c.iy = 0
    if c.iy > ry - 2: c.iy = ry - 2
    c.fy = u - c.iy
    cs = (bmax[2] - bmin[2]) / (rz - 1)
    u = (p[2] - bmin[2]) / cs
    c.iz = <long>floor(u)
    if c.iz < 0: c.iz = 0
    if c.iz > rz - 2: c.iz = rz - 2
    c.fz = u - c.iz
    return c


def grid_query(const double[:, :, :, ::1] raw, const double[::1] bmin,
               const double[::1] bmax, const double[:, ::1] pts):
    cdef Py_ssize_t n = pts.shape[0]
    sigma_np = np.zeros(n, dtype=np.float64)
    rgb_np = np.zeros((n, 3), dtype=np.float64)
    cdef double[::1] sigma = sigma_np
    cdef double[:, ::1] rgb = rgb_np
    cdef Py_ssize_t i
    cdef int bx, by, bz, ch
    cdef CellRef c
    cdef double w, wx, wy
    cdef double acc0, acc1, acc2, acc3
    with nogil:
        for i in range(n):
            c = _locate(raw, bmin, bmax, &pts[i, 0])
            if not c.inside:
                continue
            acc0 = acc1 = acc2 = acc3 = 0.0
            for bx in range(2):
                for by in range(2):
                    wx = c.fx if bx else 1.0 - c.fx
                    wy = c.fy if by else 1.0 - c.fy
                    for bz in range(2):
                        w = (wx * wy) * (c.fz if bz else 1.0 - c.fz)
                        acc0 += w * raw[0, c.ix + bx, c.iy + by, c.iz + bz]
                        acc1 += w * raw[1, c.ix + bx, c.iy + by, c.iz + bz]
                        acc2 += w * raw[2, c.ix + bx, c.iy + by, c.iz + bz]
                        acc3 += w * raw[3, c.ix + bx, c.iy + by, c.iz + bz]
            sigma[i] = _softplus(acc0)
            rgb[i, 0] = _sigmoid(acc1)
            rgb[i, 1] = _sigmoid(acc2)
            rgb[i, 2] = _sigmoid(acc3)
    return sigma_np, rgb_np


def grid_query_bwd(const double[:, :, :, ::1] raw, const double[::1] bmin,
                   const double[::1] bmax, const double[:, ::1] pts,
                   const double[::1] up_sigma, const double[:, ::1] up_rgb,
                   double[:, :, :, ::1] grad):
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t i
    cdef int bx, by, bz
    cdef CellRef c
    cdef double w, wx, wy, s
    cdef double acc0, acc1, acc2, acc3
    cdef double d0, d1, d2, d3
    with nogil:
        for i in range(n):
            c = _locate(raw, bmin, bmax, &pts[i, 0])
            if not c.inside:
                continue
            acc0 = acc1 = acc2 = acc3 = 0.0
            for bx in range(2):
                for by in range(2):
                    wx = c.fx if bx else 1.0 - c.fx
                    wy = c.fy if by else 1.0 - c.fy
                    for bz in range(2):
                        w = (wx * wy) * (c.fz if bz else 1.0 - c.fz)
                        acc0 += w * raw[0, c.ix + bx, c.iy + by, c.iz + bz]
                        acc1 += w * raw[1, c.ix + bx, c.iy + by, c.iz + bz]
                        acc2 += w * raw[2, c.ix + bx, c.iy + by, c.iz + bz]
                        acc3 += w * raw[3, c.ix + bx, c.iy + by, c.iz + bz]
            d0 = up_sigma[i] * _sigmoid(acc0)
            s = _sigmoid(acc1)
            d1 = up_rgb[i, 0] * (s * (1.0 - s))
            s = _sigmoid(acc2)
            d2 = up_rgb[i, 1] * (s * (1.0 - s))
            s = _sigmoid(acc3)
            d3 = up_rgb[i, 2] * (s * (1.0 - s))
            for bx in range(2):
                for by in range(2):
                    wx = c.fx if bx else 1.0 - c.fx
                    wy = c.fy if by else 1.0 - c.fy
                    for bz in range(2):
                        w = (wx * wy) * (c.fz if bz else 1.0 - c.fz)
                        grad[0, c.ix + bx, c.iy + by, c.iz + bz] += w * d0
                        grad[1, c.ix + bx, c.iy + by, c.iz + bz] += w * d1
                        grad[2, c.ix + bx, c.iy + by, c.iz + bz] += w * d2
                        grad[3, c.ix + bx, c.iy + by, c.iz + bz] += w * d3


def grid_density_grad(const double[:, :, :, ::1] raw, const double[::1] bmin,
                      const double[::1] bmax, const double[:, ::1] pts):
    cdef Py_ssize_t n = pts.shape[0]
    out_np = np.zeros((n, 3), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t i
    cdef int bx, by, bz
    cdef CellRef c
    cdef double acc0, gx, gy, gz, v, wx, wy, wz, sx, sy, sz, s1
    cdef double icx, icy, icz
    with nogil:
        for i in range(n):
            c = _locate(raw, bmin, bmax, &pts[i, 0])
            if not c.inside:
                continue
            icx = (raw.shape[1] - 1) / (bmax[0] - bmin[0])
            icy = (raw.shape[2] - 1) / (bmax[1] - bmin[1])
            icz = (raw.shape[3] - 1) / (bmax[2] - bmin[2])
            acc0 = gx = gy = gz = 0.0
            for bx in range(2):
                for by in range(2):
                    wx = c.fx if bx else 1.0 - c.fx
                    wy = c.fy if by else 1.0 - c.fy
                    sx = 1.0 if bx else -1.0
                    sy = 1.0 if by else -1.0
                    for bz in range(2):
                        wz = c.fz if bz else 1.0 - c.fz
                        sz = 1.0 if bz else -1.0
                        v = raw[0, c.ix + bx, c.iy + by, c.iz + bz]
                        acc0 += ((wx * wy) * wz) * v
                        gx += (sx * icx) * (wy * wz) * v
                        gy += (sy * icy) * (wx * wz) * v
                        gz += (sz * icz) * (wx * wy) * v
            s1 = _sigmoid(acc0)
            out[i, 0] = s1 * gx
            out[i, 1] = s1 * gy
            out[i, 2] = s1 * gz
    return out_np


def grid_density_grad_bwd(const double[:, :, :, ::1] raw, const double[::1] bmin,
                          const double[::1] bmax, const double[:, ::1] pts,
                          const double[:, ::1] up_g, double[:, :, :, ::1] grad):
    cdef Py_ssize_t n = pts.shape[0]
    cdef Py_ssize_t i
    cdef int bx, by, bz
    cdef CellRef c
    cdef double acc0, gx, gy, gz, v, w, wx, wy, wz, sx, sy, sz
    cdef double icx, icy, icz, s1, s2, ug_graw, contrib
    cdef double dwx, dwy, dwz
    with nogil:
        for i in range(n):
            c = _locate(raw, bmin, bmax, &pts[i, 0])
            if not c.inside:
                continue
            icx = (raw.shape[1] - 1) / (bmax[0] - bmin[0])
            icy = (raw.shape[2] - 1) / (bmax[1] - bmin[1])
            icz = (raw.shape[3] - 1) / (bmax[2] - bmin[2])
            acc0 = gx = gy = gz = 0.0
            for bx in range(2):
                for by in range(2):
                    wx = c.fx if bx else 1.0 - c.fx
                    wy = c.fy if by else 1.0 - c.fy
                    sx = 1.0 if bx else -1.0
                    sy = 1.0 if by else -1.0
                    for bz in range(2):
                        wz = c.fz if bz else 1.0 - c.fz
                        sz = 1.0 if bz else -1.0
                        v = raw[0, c.ix + bx, c.iy + by, c.iz + bz]
                        acc0 += ((wx * wy) * wz) * v
                        gx += (sx * icx) * (wy * wz) * v
                        gy += (sy * icy) * (wx * wz) * v
                        gz += (sz * icz) * (wx * wy) * v
            s1 = _sigmoid(acc0)
            s2 = s1 * (1.0 - s1)
            ug_graw = up_g[i, 0] * gx + up_g[i, 1] * gy + up_g[i, 2] * gz
            for bx in range(2):
                for by in range(2):
                    wx = c.fx if bx else 1.0 - c.fx
                    wy = c.fy if by else 1.0 - c.fy
                    sx = 1.0 if bx else -1.0
                    sy = 1.0 if by else -1.0
                    for bz in range(2):
                        wz = c.fz if bz else 1.0 - c.fz
                        sz = 1.0 if bz else -1.0
                        w = (wx * wy) * wz
                        dwx = (sx * icx) * (wy * wz)
                        dwy = (sy * icy) * (wx * wz)
                        dwz = (sz * icz) * (wx * wy)
                        contrib = s2 * w * ug_graw + s1 * (
                            up_g[i, 0] * dwx + up_g[i, 1] * dwy + up_g[i, 2] * dwz)
                        grad[0, c.ix + bx, c.iy + by, c.iz + bz] += contrib
