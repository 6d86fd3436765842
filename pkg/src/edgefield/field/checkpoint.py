"""Versioned binary field checkpoints.

Layout (little-endian throughout):

    magic   4 bytes  b"EFLD"
    version u32      currently 1
    tag     u8       0 = voxel grid, 1 = coordinate network
    metadata         representation-specific block (below)
    count   u64      parameter count P
    params  P * f64

Grid metadata: 3*u32 resolution, 6*f64 bbox (min xyz, max xyz).
Network metadata: u32 hidden-layer count, that many u32 widths, u32 position
frequency count, u8 direction-conditioning flag, u32 direction frequency
count, 6*f64 bbox.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import ConfigurationError
from .grid import VoxelGridField
from .mlp import CoordinateMlpField

MAGIC = b"EFLD"
VERSION = 1
TAG_GRID = 0
TAG_MLP = 1


def save_field(field, path):
    if field.kind == "grid":
        tag = TAG_GRID
        meta = struct.pack("<3I", *[int(r) for r in field.resolution])
        meta += struct.pack("<6d", *field.bbox_min, *field.bbox_max)
    elif field.kind == "mlp":
        tag = TAG_MLP
        meta = struct.pack("<I", len(field.hidden))
        meta += struct.pack(f"<{len(field.hidden)}I", *field.hidden)
        meta += struct.pack("<IBI", field.n_freq, int(field.use_dir), field.n_freq_dir)
        meta += struct.pack("<6d", *field.bbox_min, *field.bbox_max)
    else:
        raise ConfigurationError(f"cannot checkpoint field kind {field.kind!r}")
    theta = np.ascontiguousarray(field.theta, dtype="<f8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IB", VERSION, tag))
        f.write(meta)
        f.write(struct.pack("<Q", theta.shape[0]))
        f.write(theta.tobytes())


class _Reader:
    def __init__(self, data, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n):
        if self.off + n > len(self.data):
            raise ConfigurationError(f"truncated checkpoint {self.path}")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_field(path):
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(data, path)
    if r.take(4) != MAGIC:
        raise ConfigurationError(f"{path} is not a field checkpoint (bad magic)")
    version, tag = r.unpack("<IB")
    if version != VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version}")
    if tag == TAG_GRID:
        res = r.unpack("<3I")
        bbox = r.unpack("<6d")
        (count,) = r.unpack("<Q")
        theta = np.frombuffer(r.take(count * 8), dtype="<f8").astype(np.float64)
        return VoxelGridField(res, bbox[:3], bbox[3:], theta=theta)
    if tag == TAG_MLP:
        (n_hidden,) = r.unpack("<I")
        hidden = r.unpack(f"<{n_hidden}I")
        n_freq, use_dir, n_freq_dir = r.unpack("<IBI")
        bbox = r.unpack("<6d")
        (count,) = r.unpack("<Q")
        theta = np.frombuffer(r.take(count * 8), dtype="<f8").astype(np.float64)
        return CoordinateMlpField(bbox[:3], bbox[3:], hidden=hidden, n_freq=n_freq,
                                  use_dir=bool(use_dir), n_freq_dir=n_freq_dir,
                                  theta=theta)
    raise ConfigurationError(f"unknown representation tag {tag}")
