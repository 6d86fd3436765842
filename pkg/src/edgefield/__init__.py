"""Edge-guided depth/normal regularization for sparse-view radiance fields.

Self-contained desk-scale pipeline: synthetic Lambertian scenes with exact
ground truth, differentiable volume rendering of color/depth/normals, Canny
edge indicators, edge-gated patch losses, Adam training, and PSNR/SSIM/depth
evaluation. Hot voxel-grid kernels run through a compiled core when available
(see edgefield.kernels.BACKEND) with a numpy fallback.
"""
from .edgemap import EdgeIndicatorMap
from .field import CoordinateMlpField, RadianceField, VoxelGridField, load_field, save_field
from .geometry import Camera, PixelPatch, Ray, make_patch, pixel_to_ray
from .reg import LossBreakdown, LossWeights
from .renderer import RaySamples, RenderResult, render, render_backward, sample_ray
from .trainer import TrainConfig, TrainState, gradcheck, run_training, train_step

__version__ = "0.1.0"

__all__ = [
    "Camera", "Ray", "PixelPatch", "pixel_to_ray", "make_patch",
    "RadianceField", "VoxelGridField", "CoordinateMlpField",
    "save_field", "load_field",
    "RaySamples", "RenderResult", "sample_ray", "render", "render_backward",
    "EdgeIndicatorMap",
    "LossWeights", "LossBreakdown",
    "TrainConfig", "TrainState", "train_step", "run_training", "gradcheck",
    "__version__",
]
