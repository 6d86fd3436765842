"""Patch sampling and the edge-guided training losses.

Per 2x2 patch, non-edge pixels (e = 1) are pulled toward the edge-masked
patch mean of their rendered depth / normal through thresholded penalties;
edge pixels (e = 0) are excluded from both the mean and the loss, so
perturbing them changes nothing — exactly. Patches whose four pixels are all
edges are skipped (their masked mean is undefined).

The photometric term is a mean over the batch rays; the depth/normal terms
are sums over patches as written, with an optional mean normalization
(divide by the patch count) exposed for training configs.

Subgradient conventions: d|u|/du = 0 at u = 0 and d max(v, 0)/dv = 0 at
v = 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import renderer
from .dataio import Dataset
from .errors import InputDomainError, NumericalError
from .geometry import PixelPatch, make_patch, rays_for_pixels


@dataclass(frozen=True)
class LossWeights:
    """Loss weighting and tolerance knobs (all non-negative)."""

    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.1
    tau1: float = 1e-4   # depth tolerance, world units
    tau2: float = 0.0    # normal tolerance, squared-norm units

    def __post_init__(self):
        vals = (self.lambda1, self.lambda2, self.lambda3, self.tau1, self.tau2)
        if any(v < 0 for v in vals):
            raise InputDomainError("loss weights and tolerances must be >= 0")

    def scaled(self, lambda2=None, lambda3=None):
        return LossWeights(self.lambda1,
                           self.lambda2 if lambda2 is None else lambda2,
                           self.lambda3 if lambda3 is None else lambda3,
                           self.tau1, self.tau2)


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_z: float
    l_n: float
    total: float

    def __post_init__(self):
        for name, v in (("l_c", self.l_c), ("l_z", self.l_z),
                        ("l_n", self.l_n), ("total", self.total)):
            if not np.isfinite(v) or v < 0:
                raise NumericalError(f"loss term {name} is {v}", term=name)


@dataclass(frozen=True)
class PatchRender:
    """Rendered quantities plus ground truth for one 2x2 patch."""

    rgb: np.ndarray      # (4, 3)
    depth: np.ndarray    # (4,)
    normal: np.ndarray   # (4, 3)
    gt_rgb: np.ndarray   # (4, 3)
    edge: np.ndarray     # (4,) in {0, 1}


def sample_patches(dataset: Dataset, edge_maps, m: int, rng) -> List[PixelPatch]:
    """Uniform image choice, then m uniform top-left corners with indicators.

    edge_maps maps view index -> EdgeIndicatorMap for every training view.
    """
    if m < 1:
        raise InputDomainError("need at least one patch")
    train = dataset.train_indices
    if not train:
        raise InputDomainError("dataset has no training views")
    w, h = dataset.view_size()
    if w < 2 or h < 2:
        raise InputDomainError("images must be at least 2x2 for patch sampling")
    image_index = train[int(rng.integers(len(train)))]
    u0 = rng.integers(0, w - 1, size=m)
    v0 = rng.integers(0, h - 1, size=m)
    emap = edge_maps[image_index]
    return [make_patch(emap, image_index, (u0[j], v0[j])) for j in range(m)]


# ------------------------------------------------------------- loss kernels

def photometric_loss(rendered, gt) -> float:
    """Mean over rays of the squared L2 color error."""
    rendered = np.asarray(rendered, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if rendered.shape != gt.shape:
        raise InputDomainError("rendered/ground-truth shapes differ")
    return float(((rendered - gt) ** 2).sum() / rendered.shape[0])


def photometric_grad(rendered, gt):
    return 2.0 * (np.asarray(rendered) - np.asarray(gt)) / rendered.shape[0]


def depth_loss_terms(z, e, tau1):
    """Sum over patches of sum_i max(e_i |z_i - zbar| - tau1, 0) and d/dz."""
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    cnt = e.sum(axis=1)
    valid = cnt > 0
    safe_cnt = np.where(valid, cnt, 1.0)
    zbar = (e * z).sum(axis=1) / safe_cnt
    u = z - zbar[:, None]
    margin = e * np.abs(u) - tau1
    active = (margin > 0.0) & valid[:, None]
    loss = float(np.where(active, margin, 0.0).sum())
    sgn = np.sign(u) * active * e
    grad = sgn - (e / safe_cnt[:, None]) * sgn.sum(axis=1)[:, None]
    grad[~valid] = 0.0
    return loss, grad


def normal_loss_terms(n, e, tau2):
    """Sum over patches of sum_i max(e_i |n_i - nbar|^2 - tau2, 0) and d/dn."""
    n = np.asarray(n, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    cnt = e.sum(axis=1)
    valid = cnt > 0
    safe_cnt = np.where(valid, cnt, 1.0)
    nbar = (e[:, :, None] * n).sum(axis=1) / safe_cnt[:, None]
    u = n - nbar[:, None, :]
    q = (u * u).sum(axis=2)
    margin = e * q - tau2
    active = (margin > 0.0) & valid[:, None]
    loss = float(np.where(active, margin, 0.0).sum())
    t = 2.0 * u * (active * e)[:, :, None]
    grad = t - (e / safe_cnt[:, None])[:, :, None] * t.sum(axis=1)[:, None, :]
    grad[~valid] = 0.0
    return loss, grad


def depth_reg_loss(patches: List[PatchRender], tau1) -> float:
    if not patches:
        return 0.0
    z = np.stack([p.depth for p in patches])
    e = np.stack([p.edge for p in patches])
    return depth_loss_terms(z, e, tau1)[0]


def normal_reg_loss(patches: List[PatchRender], tau2) -> float:
    if not patches:
        return 0.0
    n = np.stack([p.normal for p in patches])
    e = np.stack([p.edge for p in patches])
    return normal_loss_terms(n, e, tau2)[0]


def total_loss(l_c, l_z, l_n, weights: LossWeights) -> LossBreakdown:
    total = weights.lambda1 * l_c + weights.lambda2 * l_z + weights.lambda3 * l_n
    return LossBreakdown(l_c=float(l_c), l_z=float(l_z), l_n=float(l_n), total=float(total))


# --------------------------------------------------- batched forward/backward

@dataclass
class PatchBatch:
    """Rays, samples, and targets for one iteration's 2x2 patches.

    Ray j of patch m is row 4*m + j; the photometric term runs over all rows.
    """

    image_index: int
    pixels: np.ndarray    # (4M, 2)
    origins: np.ndarray   # (4M, 3)
    dirs: np.ndarray      # (4M, 3)
    ts: np.ndarray        # (4M, K)
    t_far: float
    gt_rgb: np.ndarray    # (4M, 3)
    edge: np.ndarray      # (M, 4) float64

    @property
    def n_patches(self):
        return self.edge.shape[0]

    @property
    def n_rays(self):
        return self.origins.shape[0]


def build_patch_batch(dataset: Dataset, patches: List[PixelPatch], k: int,
                      rng=None, stratified: bool = False) -> PatchBatch:
    """Assemble rays and ground truth for a sampled patch list (one image)."""
    image_index = patches[0].image_index
    if any(p.image_index != image_index for p in patches):
        raise InputDomainError("a patch batch must come from a single image")
    cam = dataset.cameras[image_index]
    pixels = np.concatenate([p.pixels for p in patches], axis=0)
    origins, dirs = rays_for_pixels(cam, pixels)
    ts = renderer.sample_ts_batch(cam.near, cam.far, pixels.shape[0], k,
                                  rng=rng, stratified=stratified)
    gt = dataset.images[image_index][pixels[:, 1], pixels[:, 0]]
    edge = np.stack([p.edge for p in patches]).astype(np.float64)
    return PatchBatch(image_index=image_index, pixels=pixels, origins=origins,
                      dirs=dirs, ts=ts, t_far=cam.far, gt_rgb=gt, edge=edge)


def evaluate_losses(field, pb: PatchBatch, weights: LossWeights,
                    normalization: str = "sum", global_smoothing: bool = False):
    """Forward pass: returns (LossBreakdown, RenderBatch).

    Terms with zero weight are skipped entirely (a lambda3 = 0 run never
    queries the spatial density gradient).
    """
    want_depth = weights.lambda2 > 0
    want_normals = weights.lambda3 > 0
    rb = renderer.render_batch(field, pb.origins, pb.dirs, pb.ts, pb.t_far,
                               want_normals=want_normals)
    l_c = photometric_loss(rb.color, pb.gt_rgb)
    m = pb.n_patches
    scale = 1.0 / m if normalization == "mean" else 1.0
    edge = np.ones_like(pb.edge) if global_smoothing else pb.edge
    l_z = l_n = 0.0
    if want_depth:
        l_z = depth_loss_terms(rb.depth.reshape(m, 4), edge, weights.tau1)[0] * scale
    if want_normals:
        l_n = normal_loss_terms(rb.normal.reshape(m, 4, 3), edge, weights.tau2)[0] * scale
    return total_loss(l_c, l_z, l_n, weights), rb


def loss_backward(field, pb: PatchBatch, weights: LossWeights,
                  normalization: str = "sum", global_smoothing: bool = False,
                  rb: Optional[renderer.RenderBatch] = None):
    """Exact gradient of the weighted total loss on theta.

    Returns (LossBreakdown, grad). Pass a RenderBatch from evaluate_losses to
    reuse the forward pass.
    """
    want_depth = weights.lambda2 > 0
    want_normals = weights.lambda3 > 0
    if rb is None:
        rb = renderer.render_batch(field, pb.origins, pb.dirs, pb.ts, pb.t_far,
                                   want_normals=want_normals)
    m = pb.n_patches
    scale = 1.0 / m if normalization == "mean" else 1.0
    edge = np.ones_like(pb.edge) if global_smoothing else pb.edge

    l_c = photometric_loss(rb.color, pb.gt_rgb)
    up_color = weights.lambda1 * photometric_grad(rb.color, pb.gt_rgb)
    up_depth = np.zeros(pb.n_rays)
    up_normal = None
    l_z = l_n = 0.0
    if want_depth:
        l_z_raw, dz = depth_loss_terms(rb.depth.reshape(m, 4), edge, weights.tau1)
        l_z = l_z_raw * scale
        up_depth = (weights.lambda2 * scale) * dz.reshape(-1)
    if want_normals:
        l_n_raw, dn = normal_loss_terms(rb.normal.reshape(m, 4, 3), edge, weights.tau2)
        l_n = l_n_raw * scale
        up_normal = (weights.lambda3 * scale) * dn.reshape(-1, 3)

    grad = np.zeros(field.n_params, dtype=np.float64)
    renderer.render_backward_batch(field, rb, up_color, up_depth, up_normal, grad)
    if not np.isfinite(grad).all():
        raise NumericalError("non-finite entries in the loss gradient", term="grad")
    return total_loss(l_c, l_z, l_n, weights), grad


def patch_renders_from_batch(rb: renderer.RenderBatch, pb: PatchBatch) -> List[PatchRender]:
    """Repackage a rendered batch into per-patch records."""
    m = pb.n_patches
    color = rb.color.reshape(m, 4, 3)
    depth = rb.depth.reshape(m, 4)
    normal = (rb.normal if rb.normal is not None
              else np.zeros((pb.n_rays, 3))).reshape(m, 4, 3)
    gt = pb.gt_rgb.reshape(m, 4, 3)
    return [PatchRender(rgb=color[i], depth=depth[i], normal=normal[i],
                        gt_rgb=gt[i], edge=pb.edge[i].astype(np.uint8))
            for i in range(m)]
