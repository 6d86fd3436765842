"""Quadrature volume rendering of color, depth, and expected normals.

Discretization: per segment k, opacity alpha_k = 1 - exp(-sigma_k * delta_k),
transmittance T_k = prod_{j<k} (1 - alpha_j), weight w_k = T_k * alpha_k. The
last segment closes against t_far. Composited outputs:

    color  = sum w_k c_k
    depth  = sum w_k t_k              (no opacity renormalization)
    normal = sum w_k n_k,  n_k = -grad_sigma_k / |grad_sigma_k|

Normals are composited unnormalized; points with |grad sigma| < 1e-12
contribute a zero normal instead of a NaN. The backward pass is the exact
adjoint of this quadrature, including the dependence of n_k on the field
parameters through the spatial density gradient.

render/render_backward are pure per ray; batches are plain vectorized maps
with a deterministic reduction order.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InputDomainError
from .field.base import RadianceField
from .geometry import Ray

NORMAL_EPS = 1e-12


@dataclass
class RaySamples:
    """Quadrature nodes along one ray plus the field values at them."""

    t: np.ndarray                 # (K,) strictly increasing in [t_near, t_far]
    delta: np.ndarray             # (K,) segment lengths, last closes on t_far
    sigma: np.ndarray             # (K,)
    rgb: np.ndarray               # (K, 3)
    grad_sigma: Optional[np.ndarray] = None  # (K, 3), only when normals are needed

    def __post_init__(self):
        if self.t.ndim != 1 or self.t.shape[0] < 1:
            raise InputDomainError("need at least one sample")
        if (np.diff(self.t) <= 0).any():
            raise InputDomainError("sample distances must be strictly increasing")
        if (self.delta <= 0).any():
            raise InputDomainError("segment lengths must be positive")


@dataclass
class RenderResult:
    color: np.ndarray    # (3,)
    depth: float
    normal: np.ndarray   # (3,), zero when normals were not requested
    weights: np.ndarray  # (K,)
    t_rest: float        # residual transmittance
    opacity: float       # sum of weights


def sample_ray(ray: Ray, k: int, rng=None, stratified: bool = False) -> np.ndarray:
    """Sample distances: bin midpoints, or one uniform draw per bin."""
    if k < 2:
        raise InputDomainError("need at least 2 samples per ray")
    return sample_ts_batch(ray.t_near, ray.t_far, 1, k, rng=rng, stratified=stratified)[0]


def sample_ts_batch(t_near, t_far, n_rays: int, k: int, rng=None, stratified: bool = False):
    """(n_rays, K) sample distances over equal bins of [t_near, t_far]."""
    near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (n_rays,))
    far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (n_rays,))
    if stratified:
        if rng is None:
            raise InputDomainError("stratified sampling needs an rng")
        u = rng.random((n_rays, k))
    else:
        u = np.full((n_rays, k), 0.5)
    bins = (np.arange(k) + u) / k
    return near[:, None] + bins * (far - near)[:, None]


def make_ray_samples(field: RadianceField, ray: Ray, ts: np.ndarray,
                     want_normals: bool = False) -> RaySamples:
    """Query the field at the given distances along the ray."""
    ts = np.asarray(ts, dtype=np.float64)
    pts = ray.origin[None, :] + ts[:, None] * ray.direction[None, :]
    dirs = np.broadcast_to(ray.direction, pts.shape)
    rgb, sigma = field.query_batch(pts, dirs)
    grad_sigma = field.density_grad_batch(pts) if want_normals else None
    delta = np.empty_like(ts)
    delta[:-1] = np.diff(ts)
    delta[-1] = ray.t_far - ts[-1]
    return RaySamples(t=ts, delta=delta, sigma=sigma, rgb=rgb, grad_sigma=grad_sigma)


def _unit_normals(grad_sigma):
    """n_k = -g/|g| with the zero-gradient guard; also returns |g| and the mask."""
    norms = np.linalg.norm(grad_sigma, axis=-1)
    ok = norms >= NORMAL_EPS
    safe = np.where(ok, norms, 1.0)
    n = -grad_sigma / safe[..., None]
    n[~ok] = 0.0
    return n, norms, ok


def composite(sigma, rgb, t, delta, grad_sigma=None):
    """Vectorized quadrature over (R, K) samples; returns a dict of arrays."""
    one_minus_alpha = np.exp(-sigma * delta)
    alpha = -np.expm1(-sigma * delta)
    cp = np.cumprod(one_minus_alpha, axis=-1)
    trans = np.concatenate([np.ones_like(cp[..., :1]), cp[..., :-1]], axis=-1)
    weights = trans * alpha
    color = (weights[..., None] * rgb).sum(axis=-2)
    depth = (weights * t).sum(axis=-1)
    out = {
        "color": color,
        "depth": depth,
        "weights": weights,
        "t_rest": cp[..., -1],
        "opacity": weights.sum(axis=-1),
        "alpha": alpha,
        "one_minus_alpha": one_minus_alpha,
        "trans": trans,
    }
    if grad_sigma is not None:
        n_k, norms, ok = _unit_normals(grad_sigma)
        out["normal"] = (weights[..., None] * n_k).sum(axis=-2)
        out["normal_k"] = n_k
        out["grad_norms"] = norms
        out["grad_ok"] = ok
    return out


def composite_backward(fw, sigma, rgb, t, delta, up_color, up_depth, up_normal=None):
    """Adjoint of composite: upstreams on (color, depth, normal) to per-sample
    upstreams on (sigma, rgb, grad_sigma)."""
    weights = fw["weights"]
    trans = fw["trans"]
    one_minus_alpha = fw["one_minus_alpha"]

    s = (up_color[..., None, :] * rgb).sum(axis=-1) + up_depth[..., None] * t
    up_g = None
    if up_normal is not None:
        n_k = fw["normal_k"]
        s = s + (up_normal[..., None, :] * n_k).sum(axis=-1)
        # d(n)/d(g) = -(I - n n^T)/|g| on the guarded samples
        up_nk = weights[..., None] * up_normal[..., None, :]
        norms = fw["grad_norms"]
        ok = fw["grad_ok"]
        safe = np.where(ok, norms, 1.0)
        proj = (n_k * up_nk).sum(axis=-1, keepdims=True) * n_k
        up_g = -(up_nk - proj) / safe[..., None]
        up_g[~ok] = 0.0

    ws = weights * s
    rev = np.flip(np.cumsum(np.flip(ws, axis=-1), axis=-1), axis=-1)
    suffix = rev - ws  # sum over j > k of w_j s_j
    # d alpha / d sigma = delta * (1 - alpha); the (1 - alpha) factor cancels
    # the division hidden in d T_j / d alpha_k, so no guard is needed
    up_sigma = delta * (trans * s * one_minus_alpha - suffix)
    up_rgb = weights[..., None] * up_color[..., None, :]
    return up_sigma, up_rgb, up_g


def render(field: RadianceField, ray: Ray, samples) -> RenderResult:
    """Render one ray from a RaySamples (or raw distances, queried here)."""
    if not isinstance(samples, RaySamples):
        samples = make_ray_samples(field, ray, samples)
    fw = composite(samples.sigma[None], samples.rgb[None], samples.t[None],
                   samples.delta[None], None if samples.grad_sigma is None
                   else samples.grad_sigma[None])
    normal = fw["normal"][0] if "normal" in fw else np.zeros(3)
    return RenderResult(
        color=fw["color"][0],
        depth=float(fw["depth"][0]),
        normal=normal,
        weights=fw["weights"][0],
        t_rest=float(fw["t_rest"][0]),
        opacity=float(fw["opacity"][0]),
    )


def render_backward(field: RadianceField, ray: Ray, samples: RaySamples,
                    up_color, up_depth, up_normal=None) -> np.ndarray:
    """Dense parameter gradient of up . (color, depth, normal) for one ray."""
    if up_normal is not None and samples.grad_sigma is None:
        raise InputDomainError("normal upstream needs samples rendered with normals")
    grad = np.zeros(field.n_params, dtype=np.float64)
    batch = RenderBatch(
        origins=ray.origin[None, :],
        dirs=ray.direction[None, :],
        ts=samples.t[None, :],
        deltas=samples.delta[None, :],
        sigma=samples.sigma[None, :],
        rgb=samples.rgb[None, :, :],
        grad_sigma=None if samples.grad_sigma is None else samples.grad_sigma[None],
        fw=composite(samples.sigma[None], samples.rgb[None], samples.t[None],
                     samples.delta[None], None if samples.grad_sigma is None
                     else samples.grad_sigma[None]),
    )
    up_n = None if up_normal is None else np.asarray(up_normal, dtype=np.float64)[None, :]
    render_backward_batch(
        field, batch,
        np.asarray(up_color, dtype=np.float64)[None, :],
        np.asarray([up_depth], dtype=np.float64),
        up_n, grad,
    )
    return grad


@dataclass
class RenderBatch:
    """Forward render of many rays with everything the adjoint needs."""

    origins: np.ndarray   # (R, 3)
    dirs: np.ndarray      # (R, 3)
    ts: np.ndarray        # (R, K)
    deltas: np.ndarray    # (R, K)
    sigma: np.ndarray     # (R, K)
    rgb: np.ndarray       # (R, K, 3)
    grad_sigma: Optional[np.ndarray]  # (R, K, 3)
    fw: dict

    @property
    def color(self):
        return self.fw["color"]

    @property
    def depth(self):
        return self.fw["depth"]

    @property
    def normal(self):
        return self.fw.get("normal")

    @property
    def points(self):
        return self.origins[:, None, :] + self.ts[..., None] * self.dirs[:, None, :]


def render_batch(field: RadianceField, origins, dirs, ts, t_far,
                 want_normals: bool = False) -> RenderBatch:
    """Render R rays with shared sample counts; ts is (R, K)."""
    origins = np.asarray(origins, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    r, k = ts.shape
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    flat_pts = pts.reshape(-1, 3)
    flat_dirs = np.broadcast_to(dirs[:, None, :], pts.shape).reshape(-1, 3)
    rgb, sigma = field.query_batch(flat_pts, flat_dirs)
    rgb = rgb.reshape(r, k, 3)
    sigma = sigma.reshape(r, k)
    grad_sigma = None
    if want_normals:
        grad_sigma = field.density_grad_batch(flat_pts).reshape(r, k, 3)
    deltas = np.empty_like(ts)
    deltas[:, :-1] = np.diff(ts, axis=1)
    deltas[:, -1] = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (r,)) - ts[:, -1]
    fw = composite(sigma, rgb, ts, deltas, grad_sigma)
    return RenderBatch(origins=origins, dirs=dirs, ts=ts, deltas=deltas,
                       sigma=sigma, rgb=rgb, grad_sigma=grad_sigma, fw=fw)


def render_backward_batch(field: RadianceField, batch: RenderBatch,
                          up_color, up_depth, up_normal, out_grad) -> None:
    """Accumulate the exact parameter gradient for a rendered batch."""
    up_sigma, up_rgb, up_g = composite_backward(
        batch.fw, batch.sigma, batch.rgb, batch.ts, batch.deltas,
        np.asarray(up_color, dtype=np.float64),
        np.asarray(up_depth, dtype=np.float64),
        None if up_normal is None else np.asarray(up_normal, dtype=np.float64),
    )
    flat_pts = batch.points.reshape(-1, 3)
    flat_dirs = np.broadcast_to(batch.dirs[:, None, :], batch.points.shape).reshape(-1, 3)
    field.param_backward_query(flat_pts, flat_dirs, up_rgb.reshape(-1, 3),
                               up_sigma.reshape(-1), out_grad)
    if up_g is not None:
        field.param_backward_density_grad(flat_pts, up_g.reshape(-1, 3), out_grad)


def render_image(field: RadianceField, camera, k: int, want_normals: bool = False,
                 chunk: int = 16384):
    """Deterministic full-image render (midpoint sampling). Returns a dict of
    (H, W[, C]) arrays: color, depth, opacity[, normal]."""
    h, w = camera.height, camera.width
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    uv = np.stack([us.ravel(), vs.ravel()], axis=1)
    from .geometry import rays_for_pixels

    origins, dirs = rays_for_pixels(camera, uv)
    n = uv.shape[0]
    color = np.zeros((n, 3))
    depth = np.zeros(n)
    opacity = np.zeros(n)
    normal = np.zeros((n, 3)) if want_normals else None
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        ts = sample_ts_batch(camera.near, camera.far, hi - lo, k)
        b = render_batch(field, origins[lo:hi], dirs[lo:hi], ts, camera.far,
                         want_normals=want_normals)
        color[lo:hi] = b.color
        depth[lo:hi] = b.depth
        opacity[lo:hi] = b.fw["opacity"]
        if want_normals:
            normal[lo:hi] = b.normal
    out = {
        "color": color.reshape(h, w, 3),
        "depth": depth.reshape(h, w),
        "opacity": opacity.reshape(h, w),
    }
    if want_normals:
        out["normal"] = normal.reshape(h, w, 3)
    return out
