"""Dense voxel-grid radiance field.

Raw values live on grid vertices; queries interpolate raw values trilinearly
and squash afterwards (softplus for density, sigmoid for color). This keeps
every derivative analytic — including the second-order term needed when the
normal loss backpropagates through the spatial density gradient. The view
direction is ignored by this representation.
"""
from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import InputDomainError
from .base import RadianceField

RAW_SIGMA_INIT = -2.0  # near-transparent start
RAW_COLOR_INIT = 0.0   # mid-gray


class VoxelGridField(RadianceField):
    kind = "grid"

    def __init__(self, resolution, bbox_min, bbox_max, theta=None):
        res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,)).copy()
        if (res < 2).any():
            raise InputDomainError("grid resolution must be >= 2 per axis")
        bmin = np.asarray(bbox_min, dtype=np.float64).copy()
        bmax = np.asarray(bbox_max, dtype=np.float64).copy()
        if bmin.shape != (3,) or bmax.shape != (3,) or not (bmax > bmin).all():
            raise InputDomainError("bounding box must have positive extent per axis")
        self.resolution = res
        self.bbox_min = bmin
        self.bbox_max = bmax
        p = int(4 * res.prod())
        if theta is None:
            theta = np.empty(p, dtype=np.float64)
            raw = theta.reshape(4, *res)
            raw[0] = RAW_SIGMA_INIT
            raw[1:4] = RAW_COLOR_INIT
        else:
            theta = np.asarray(theta, dtype=np.float64)
            if theta.shape != (p,):
                raise InputDomainError(f"theta must have length {p}, got {theta.shape}")
        self.theta = theta

    @property
    def raw(self):
        """(4, Rx, Ry, Rz) view of theta: channel 0 density, 1..3 color."""
        return self.theta.reshape(4, *self.resolution)

    @property
    def cell_size(self):
        return (self.bbox_max - self.bbox_min) / (self.resolution - 1)

    def vertex_position(self, ix, iy, iz):
        return self.bbox_min + np.array([ix, iy, iz], dtype=np.float64) * self.cell_size

    def query_batch(self, pts, dirs=None):
        pts = np.ascontiguousarray(pts, dtype=np.float64)
        sigma, rgb = kernels.grid_query(self.raw, self.bbox_min, self.bbox_max, pts)
        return rgb, sigma

    def density_grad_batch(self, pts):
        pts = np.ascontiguousarray(pts, dtype=np.float64)
        return kernels.grid_density_grad(self.raw, self.bbox_min, self.bbox_max, pts)

    def param_backward_query(self, pts, dirs, up_rgb, up_sigma, out_grad):
        pts = np.ascontiguousarray(pts, dtype=np.float64)
        kernels.grid_query_bwd(
            self.raw, self.bbox_min, self.bbox_max, pts,
            np.ascontiguousarray(up_sigma, dtype=np.float64),
            np.ascontiguousarray(up_rgb, dtype=np.float64),
            out_grad.reshape(4, *self.resolution),
        )

    def param_backward_density_grad(self, pts, up_g, out_grad):
        pts = np.ascontiguousarray(pts, dtype=np.float64)
        kernels.grid_density_grad_bwd(
            self.raw, self.bbox_min, self.bbox_max, pts,
            np.ascontiguousarray(up_g, dtype=np.float64),
            out_grad.reshape(4, *self.resolution),
        )
