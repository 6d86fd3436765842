"""Dataset directory layout and image file formats.

A dataset directory contains:

    cameras.txt      one line per view: index, width, height, fx, fy, cx, cy,
                     12 floats of the row-major camera-to-world 3x4, near, far
    rgb/%03d.png     8-bit RGB renders
    depth/%03d.pfm   single-channel PFM, little-endian f32, scale -1.0
    normal/%03d.pfm  3-channel PFM
    edges/%03d.png   optional 8-bit grayscale edge-strength maps
    split.txt        "train i j k" / "test ..." lines (all views train if absent)

PFM scanlines are stored bottom-to-top per the format's convention.
"""
from __future__ import annotations

import os
import re
from dataclasses import dataclass, field as dc_field
from typing import List, Optional

import numpy as np
from PIL import Image

from .errors import ConfigurationError
from .geometry import Camera


# ---------------------------------------------------------------- PNG helpers

def float01_to_u8(a):
    return np.round(np.clip(a, 0.0, 1.0) * 255.0).astype(np.uint8)


def u8_to_float01(a):
    return np.asarray(a, dtype=np.float64) / 255.0


def save_png(path, arr):
    """Write a uint8 array (H, W) or (H, W, 3) as PNG."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ConfigurationError("save_png expects a uint8 array")
    Image.fromarray(arr).save(path)


def load_png(path):
    """Read a PNG as a uint8 array; grayscale (H, W) or color (H, W, 3)."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P") else "L")
            return np.asarray(im, dtype=np.uint8)
    except OSError as exc:
        raise ConfigurationError(f"cannot read image {path}: {exc}") from exc


# ---------------------------------------------------------------- PFM helpers

def save_pfm(path, data):
    """Write (H, W) or (H, W, 3) float data as a little-endian PFM."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ConfigurationError(f"PFM data must be (H, W) or (H, W, 3), got {data.shape}")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")  # negative scale marks little-endian
        f.write(np.ascontiguousarray(data[::-1], dtype="<f4").tobytes())


def load_pfm(path):
    """Read a PFM; returns float32 (H, W) or (H, W, 3), top row first."""
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise ConfigurationError(f"{path} is not a PFM file")
        dims = f.readline().decode("ascii").split()
        if len(dims) != 2:
            raise ConfigurationError(f"bad PFM dimensions line in {path}")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().decode("ascii").strip())
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(w * h * channels * 4)
        if len(raw) != w * h * channels * 4:
            raise ConfigurationError(f"truncated PFM {path}")
        data = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    data = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return data[::-1].copy()


# ----------------------------------------------------------------- cameras.txt

def _fmt(x):
    return repr(float(x))


def save_cameras_txt(path, cameras: List[Camera]):
    lines = []
    for idx, cam in enumerate(cameras):
        pose = np.concatenate([cam.rotation, cam.translation[:, None]], axis=1)
        fields = [str(idx), str(cam.width), str(cam.height),
                  _fmt(cam.fx), _fmt(cam.fy), _fmt(cam.cx), _fmt(cam.cy)]
        fields += [_fmt(v) for v in pose.reshape(-1)]
        fields += [_fmt(cam.near), _fmt(cam.far)]
        lines.append(" ".join(fields))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_cameras_txt(path) -> List[Camera]:
    cameras = []
    try:
        with open(path) as f:
            rows = [ln.split() for ln in f if ln.strip()]
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    for row in rows:
        if len(row) != 21:
            raise ConfigurationError(f"camera line needs 21 fields, got {len(row)} in {path}")
        vals = [float(v) for v in row]
        pose = np.array(vals[7:19]).reshape(3, 4)
        cameras.append(Camera(
            width=int(vals[1]), height=int(vals[2]),
            fx=vals[3], fy=vals[4], cx=vals[5], cy=vals[6],
            rotation=pose[:, :3], translation=pose[:, 3],
            near=vals[19], far=vals[20],
        ))
    order = np.argsort([int(r[0]) for r in rows])
    return [cameras[i] for i in order]


# -------------------------------------------------------------------- dataset

@dataclass
class Dataset:
    images: np.ndarray                 # (N, H, W, 3) float in [0, 1]
    depths: np.ndarray                 # (N, H, W) float, 0 on background
    normals: np.ndarray                # (N, H, W, 3) float, unit at hits
    cameras: List[Camera]
    edge_strengths: Optional[np.ndarray] = None  # (N, H, W) float in [0, 255]
    train_indices: List[int] = dc_field(default_factory=list)
    test_indices: List[int] = dc_field(default_factory=list)

    @property
    def n_views(self):
        return self.images.shape[0]

    def view_size(self):
        return self.images.shape[2], self.images.shape[1]  # (W, H)


def save_split_txt(path, train_indices, test_indices):
    with open(path, "w") as f:
        f.write("train " + " ".join(str(i) for i in train_indices) + "\n")
        f.write("test " + " ".join(str(i) for i in test_indices) + "\n")


def load_split_txt(path):
    train, test = [], []
    with open(path) as f:
        for ln in f:
            parts = ln.split()
            if not parts:
                continue
            if parts[0] == "train":
                train = [int(v) for v in parts[1:]]
            elif parts[0] == "test":
                test = [int(v) for v in parts[1:]]
    return train, test


def save_dataset(ds: Dataset, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("rgb", "depth", "normal"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    save_cameras_txt(os.path.join(out_dir, "cameras.txt"), ds.cameras)
    save_split_txt(os.path.join(out_dir, "split.txt"), ds.train_indices, ds.test_indices)
    for i in range(ds.n_views):
        save_png(os.path.join(out_dir, "rgb", f"{i:03d}.png"), float01_to_u8(ds.images[i]))
        save_pfm(os.path.join(out_dir, "depth", f"{i:03d}.pfm"), ds.depths[i])
        save_pfm(os.path.join(out_dir, "normal", f"{i:03d}.pfm"), ds.normals[i])
    if ds.edge_strengths is not None:
        os.makedirs(os.path.join(out_dir, "edges"), exist_ok=True)
        for i in range(ds.n_views):
            save_png(os.path.join(out_dir, "edges", f"{i:03d}.png"),
                     np.round(ds.edge_strengths[i]).astype(np.uint8))


def _indexed_files(directory, pattern):
    rx = re.compile(pattern)
    found = {}
    for name in os.listdir(directory):
        m = rx.fullmatch(name)
        if m:
            found[int(m.group(1))] = os.path.join(directory, name)
    return [found[i] for i in sorted(found)]


def load_dataset(data_dir) -> Dataset:
    cam_path = os.path.join(data_dir, "cameras.txt")
    if not os.path.isfile(cam_path):
        raise ConfigurationError(f"{data_dir} has no cameras.txt")
    cameras = load_cameras_txt(cam_path)
    n = len(cameras)

    rgb_dir = os.path.join(data_dir, "rgb")
    if not os.path.isdir(rgb_dir):
        raise ConfigurationError(f"{data_dir} has no rgb/ directory")
    rgb_files = _indexed_files(rgb_dir, r"(\d+)\.png")
    if len(rgb_files) != n:
        raise ConfigurationError(f"{n} cameras but {len(rgb_files)} rgb images")
    images = np.stack([u8_to_float01(load_png(p)) for p in rgb_files])
    if images.shape[1] != cameras[0].height or images.shape[2] != cameras[0].width:
        raise ConfigurationError("image size does not match camera intrinsics")

    def _load_stack(sub, loader, required_shape):
        path = os.path.join(data_dir, sub)
        if not os.path.isdir(path):
            return None
        files = _indexed_files(path, r"(\d+)\.(?:pfm|png)")
        if len(files) != n:
            raise ConfigurationError(f"{n} cameras but {len(files)} files in {sub}/")
        stack = np.stack([loader(p) for p in files]).astype(np.float64)
        if stack.shape[1:3] != required_shape:
            raise ConfigurationError(f"{sub}/ dimensions do not match the rgb images")
        return stack

    hw = images.shape[1:3]
    depths = _load_stack("depth", load_pfm, hw)
    normals = _load_stack("normal", load_pfm, hw)
    edges = _load_stack("edges", lambda p: load_png(p).astype(np.float64), hw)
    if depths is None:
        depths = np.zeros(images.shape[:3])
    if normals is None:
        normals = np.zeros(images.shape)

    split_path = os.path.join(data_dir, "split.txt")
    if os.path.isfile(split_path):
        train, test = load_split_txt(split_path)
    else:
        train, test = list(range(n)), []
    bad = [i for i in train + test if not 0 <= i < n]
    if bad:
        raise ConfigurationError(f"split.txt references missing views {bad}")
    return Dataset(images=images, depths=depths, normals=normals, cameras=cameras,
                   edge_strengths=edges, train_indices=train, test_indices=test)
