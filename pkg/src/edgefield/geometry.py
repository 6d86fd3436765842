"""Pinhole cameras, rays, and pixel/patch addressing.

Conventions, fixed once and reused everywhere (including the synthetic data
generator so datasets are self-consistent):

* image u grows to the right, image v grows downward;
* the camera looks along +z of its own frame (right-down-forward);
* pixel (u, v) is sampled at its center (u + 0.5, v + 0.5);
* poses are camera-to-world (rotation matrix + camera center).

All types are immutable after construction and safe to share across workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import InputDomainError

if TYPE_CHECKING:
    from .edgemap import EdgeIndicatorMap

ORTHONORMAL_TOL = 1e-9
UNIT_TOL = 1e-9


def _frozen_f64(value, shape, name):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != shape:
        raise InputDomainError(f"{name} must have shape {shape}, got {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class Camera:
    """Calibrated pinhole camera with a camera-to-world pose and ray t-bounds."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray      # (3, 3) camera-to-world
    translation: np.ndarray   # (3,) camera center in world units
    near: float
    far: float

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen_f64(self.rotation, (3, 3), "rotation"))
        object.__setattr__(self, "translation", _frozen_f64(self.translation, (3,), "translation"))
        if self.width < 2 or self.height < 2:
            raise InputDomainError("image must be at least 2x2 pixels")
        if self.fx <= 0 or self.fy <= 0:
            raise InputDomainError("focal lengths must be positive")
        if not (0.0 < self.near < self.far):
            raise InputDomainError("need 0 < near < far")
        r = self.rotation
        residual = np.abs(r.T @ r - np.eye(3)).max()
        if residual > ORTHONORMAL_TOL:
            raise InputDomainError(f"rotation is not orthonormal (residual {residual:.3e})")
        if np.linalg.det(r) < 0.0:
            raise InputDomainError("rotation must have determinant +1")


@dataclass(frozen=True)
class Ray:
    """World-space ray origin + t*direction with sampling bounds."""

    origin: np.ndarray     # (3,)
    direction: np.ndarray  # (3,), unit
    t_near: float
    t_far: float

    def __post_init__(self):
        object.__setattr__(self, "origin", _frozen_f64(self.origin, (3,), "origin"))
        object.__setattr__(self, "direction", _frozen_f64(self.direction, (3,), "direction"))
        norm = float(np.linalg.norm(self.direction))
        if abs(norm - 1.0) > UNIT_TOL:
            raise InputDomainError(f"direction must be unit length (|d| = {norm})")
        if not self.t_near < self.t_far:
            raise InputDomainError("need t_near < t_far")

    def point_at(self, t):
        return self.origin + t * self.direction


@dataclass(frozen=True)
class PixelPatch:
    """A 2x2 pixel block with per-pixel edge indicators.

    Member order is row-major: top-left, top-right, bottom-left, bottom-right.
    edge[i] == 1 means the pixel is regularizable (non-edge), 0 means excluded.
    """

    image_index: int
    pixels: np.ndarray  # (4, 2) int, columns (u, v)
    edge: np.ndarray    # (4,) uint8 in {0, 1}

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.int64).copy()
        e = np.asarray(self.edge, dtype=np.uint8).copy()
        if px.shape != (4, 2) or e.shape != (4,):
            raise InputDomainError("patch needs 4 pixels and 4 indicators")
        u0, v0 = px[0]
        expected = np.array([[u0, v0], [u0 + 1, v0], [u0, v0 + 1], [u0 + 1, v0 + 1]])
        if not np.array_equal(px, expected):
            raise InputDomainError("pixels must form a row-major axis-aligned 2x2 block")
        if not np.isin(e, (0, 1)).all():
            raise InputDomainError("edge indicators must be 0 or 1")
        px.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "pixels", px)
        object.__setattr__(self, "edge", e)


def pixel_to_ray(camera: Camera, u: int, v: int) -> Ray:
    """Ray through the center of pixel (u, v); bounds copied from the camera."""
    if not (0 <= u < camera.width and 0 <= v < camera.height):
        raise InputDomainError(f"pixel ({u}, {v}) outside {camera.width}x{camera.height} image")
    origins, dirs = rays_for_pixels(camera, np.array([[u, v]], dtype=np.float64))
    return Ray(origins[0], dirs[0], camera.near, camera.far)


def rays_for_pixels(camera: Camera, uv: np.ndarray):
    """Vectorized pixel_to_ray: uv is (N, 2) integer pixel coords.

    Returns (origins (N, 3), unit directions (N, 3)).
    """
    uv = np.asarray(uv, dtype=np.float64)
    x = (uv[:, 0] + 0.5 - camera.cx) / camera.fx
    y = (uv[:, 1] + 0.5 - camera.cy) / camera.fy
    d_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    d_world = d_cam @ camera.rotation.T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.translation, d_world.shape).copy()
    return origins, d_world


def project_point(camera: Camera, point):
    """World point -> continuous pixel coords (u, v) and camera-frame depth z.

    Inverse of the pixel_to_ray convention: a point on the ray of pixel (u, v)
    projects back to (u + 0.5, v + 0.5).
    """
    p_cam = camera.rotation.T @ (np.asarray(point, dtype=np.float64) - camera.translation)
    z = p_cam[2]
    if z <= 0:
        raise InputDomainError("point is behind the camera")
    u = camera.fx * p_cam[0] / z + camera.cx
    v = camera.fy * p_cam[1] / z + camera.cy
    return u, v, z


def look_at_rotation(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """Camera-to-world rotation for a camera at `eye` looking at `target`.

    Columns are (right, down, forward) in world coordinates; right-handed with
    det +1. Degenerate when the view direction is parallel to `up`.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(forward)
    if n < 1e-12:
        raise InputDomainError("eye and target coincide")
    forward = forward / n
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise InputDomainError("view direction parallel to up vector")
    right /= rn
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def make_patch(edge_map: "EdgeIndicatorMap", image_index: int, top_left) -> PixelPatch:
    """Build the 2x2 patch at `top_left` = (u0, v0), copying indicators."""
    u0, v0 = int(top_left[0]), int(top_left[1])
    if not (0 <= u0 <= edge_map.width - 2 and 0 <= v0 <= edge_map.height - 2):
        raise InputDomainError(f"2x2 block at ({u0}, {v0}) exceeds image bounds")
    vals = edge_map.values
    e = np.array(
        [vals[v0, u0], vals[v0, u0 + 1], vals[v0 + 1, u0], vals[v0 + 1, u0 + 1]],
        dtype=np.uint8,
    )
    pixels = np.array(
        [[u0, v0], [u0 + 1, v0], [u0, v0 + 1], [u0 + 1, v0 + 1]], dtype=np.int64
    )
    return PixelPatch(image_index=image_index, pixels=pixels, edge=e)
