"""Radiance field interface: (position, direction) -> (color, density).

Both representations share a flat parameter vector `theta` (float64) that the
optimizer updates in place between iterations, exact parameter-gradient
accumulation (additive across queries), and a spatial density-gradient query
used for surface normals. Queries outside the bounding box are empty space:
zero density, black color, zero gradients — rays may extend past the scene
box without erroring.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InputDomainError

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class FieldQuery:
    position: np.ndarray   # (3,) world
    direction: np.ndarray  # (3,) unit

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        if p.shape != (3,) or d.shape != (3,):
            raise InputDomainError("query position/direction must be 3-vectors")
        if abs(np.linalg.norm(d) - 1.0) > UNIT_TOL:
            raise InputDomainError("query direction must be unit length")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "direction", d)


@dataclass(frozen=True)
class FieldOutput:
    color: np.ndarray  # (3,) in [0, 1]
    density: float     # >= 0, 1/world-unit

    def __post_init__(self):
        c = np.asarray(self.color, dtype=np.float64)
        if c.shape != (3,):
            raise InputDomainError("color must be a 3-vector")
        if self.density < 0 or (c < 0).any() or (c > 1).any():
            raise InputDomainError("density must be >= 0 and color in [0, 1]")
        object.__setattr__(self, "color", c)


class RadianceField:
    """Base class; subclasses provide the batch compute methods."""

    kind = "abstract"
    theta: np.ndarray  # flat float64 parameter vector, updated in place
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    @property
    def n_params(self) -> int:
        return self.theta.shape[0]

    # ---- batch interface (implemented by subclasses) ----

    def query_batch(self, pts, dirs=None):
        """(N,3)[, (N,3)] -> (rgb (N,3), sigma (N,))."""
        raise NotImplementedError

    def density_grad_batch(self, pts):
        """(N,3) -> d(sigma)/d(x) (N,3)."""
        raise NotImplementedError

    def param_backward_query(self, pts, dirs, up_rgb, up_sigma, out_grad):
        """Accumulate d(sum up . output)/d(theta) into out_grad (P,)."""
        raise NotImplementedError

    def param_backward_density_grad(self, pts, up_g, out_grad):
        """Accumulate d(sum up_g . density_grad)/d(theta) into out_grad (P,)."""
        raise NotImplementedError

    # ---- scalar convenience wrappers ----

    def query(self, q: FieldQuery) -> FieldOutput:
        rgb, sigma = self.query_batch(q.position[None, :], q.direction[None, :])
        return FieldOutput(color=rgb[0], density=float(sigma[0]))

    def density_spatial_gradient(self, x) -> np.ndarray:
        return self.density_grad_batch(np.asarray(x, dtype=np.float64)[None, :])[0]

    def query_param_gradient(self, q: FieldQuery, upstream) -> np.ndarray:
        """Dense d(upstream . (rgb, sigma))/d(theta); upstream is (r, g, b, sigma)."""
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != (4,):
            raise InputDomainError("upstream must have 4 entries (3 color + 1 density)")
        grad = np.zeros(self.n_params, dtype=np.float64)
        self.param_backward_query(
            q.position[None, :], q.direction[None, :],
            upstream[None, :3], upstream[3:4], grad,
        )
        return grad

    def inside_mask(self, pts):
        return np.logical_and(pts >= self.bbox_min, pts <= self.bbox_max).all(axis=1)
