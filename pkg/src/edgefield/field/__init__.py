"""Radiance field representations and checkpoint I/O."""
from .base import FieldOutput, FieldQuery, RadianceField
from .checkpoint import load_field, save_field
from .grid import VoxelGridField
from .mlp import CoordinateMlpField

__all__ = [
    "FieldOutput",
    "FieldQuery",
    "RadianceField",
    "VoxelGridField",
    "CoordinateMlpField",
    "save_field",
    "load_field",
]
