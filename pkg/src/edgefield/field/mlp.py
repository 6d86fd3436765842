"""Coordinate-network radiance field: frequency encoding + small MLP.

Positions are normalized into [-1, 1] by the bounding box, expanded with
sin/cos frequency features, and pushed through a ReLU trunk. Two linear heads
produce raw density (position only, so the density field stays independent of
the view direction) and raw color (optionally conditioned on encoded
direction); outputs are squashed like the grid. Spatial density gradients use
central finite differences with a step tied to the scene diagonal; their
backward pass differentiates through the stencil's forward evaluations, so no
second-order machinery is needed.
"""
from __future__ import annotations

import numpy as np

from ..errors import InputDomainError
from ..kernels import sigmoid, softplus
from .base import RadianceField

FD_STEP_FRACTION = 1e-3  # finite-difference step as a fraction of the scene diagonal


def _encode(x, n_freq):
    """[x, sin(2^j x), cos(2^j x) for j < n_freq], feature dim 3 + 6*n_freq."""
    feats = [x]
    for j in range(n_freq):
        s = (2.0 ** j) * x
        feats.append(np.sin(s))
        feats.append(np.cos(s))
    return np.concatenate(feats, axis=1)


class CoordinateMlpField(RadianceField):
    kind = "mlp"

    def __init__(self, bbox_min, bbox_max, hidden=(64, 64, 64, 64), n_freq=6,
                 use_dir=False, n_freq_dir=2, theta=None, seed=0):
        bmin = np.asarray(bbox_min, dtype=np.float64).copy()
        bmax = np.asarray(bbox_max, dtype=np.float64).copy()
        if bmin.shape != (3,) or bmax.shape != (3,) or not (bmax > bmin).all():
            raise InputDomainError("bounding box must have positive extent per axis")
        self.bbox_min = bmin
        self.bbox_max = bmax
        self.hidden = tuple(int(h) for h in hidden)
        if len(self.hidden) < 1 or any(h < 1 for h in self.hidden):
            raise InputDomainError("need at least one hidden layer of width >= 1")
        self.n_freq = int(n_freq)
        self.use_dir = bool(use_dir)
        self.n_freq_dir = int(n_freq_dir)
        pos_dim = 3 + 6 * self.n_freq
        self.dir_dim = (3 + 6 * self.n_freq_dir) if self.use_dir else 0
        trunk = [pos_dim, *self.hidden]
        # trunk layers, then the density head, then the color head
        self._shapes = [(trunk[i + 1], trunk[i]) for i in range(len(trunk) - 1)]
        self._shapes.append((1, self.hidden[-1]))
        self._shapes.append((3, self.hidden[-1] + self.dir_dim))
        p = sum(o * i + o for o, i in self._shapes)
        if theta is None:
            rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
            theta = np.empty(p, dtype=np.float64)
            off = 0
            for out_d, in_d in self._shapes:
                s = np.sqrt(6.0 / (in_d + out_d))
                theta[off:off + out_d * in_d] = rng.uniform(-s, s, size=out_d * in_d)
                off += out_d * in_d
                theta[off:off + out_d] = 0.0
                off += out_d
        else:
            theta = np.asarray(theta, dtype=np.float64)
            if theta.shape != (p,):
                raise InputDomainError(f"theta must have length {p}, got {theta.shape}")
        self.theta = theta

    def _layers(self, theta=None):
        """Views of (W, b) per layer into the flat parameter vector."""
        theta = self.theta if theta is None else theta
        out, off = [], 0
        for out_d, in_d in self._shapes:
            w = theta[off:off + out_d * in_d].reshape(out_d, in_d)
            off += out_d * in_d
            b = theta[off:off + out_d]
            off += out_d
            out.append((w, b))
        return out

    def _pos_features(self, pts):
        xn = 2.0 * (pts - self.bbox_min) / (self.bbox_max - self.bbox_min) - 1.0
        return _encode(xn, self.n_freq)

    def _forward_raw(self, pts, dirs):
        """Raw (sigma (N,), rgb (N,3)) plus activation cache for backward."""
        a = self._pos_features(pts)
        cache = [a]
        layers = self._layers()
        n_trunk = len(self.hidden)
        for w, b in layers[:n_trunk]:
            a = np.maximum(a @ w.T + b, 0.0)
            cache.append(a)
        ws, bs = layers[n_trunk]
        raw_sigma = a @ ws.T + bs
        if self.use_dir:
            dfeat = _encode(dirs if dirs is not None else np.zeros_like(pts),
                            self.n_freq_dir)
            cfeat = np.concatenate([a, dfeat], axis=1)
        else:
            cfeat = a
        wc, bc = layers[n_trunk + 1]
        raw_rgb = cfeat @ wc.T + bc
        return raw_sigma[:, 0], raw_rgb, cache, cfeat

    def query_batch(self, pts, dirs=None):
        pts = np.asarray(pts, dtype=np.float64)
        n = pts.shape[0]
        rgb = np.zeros((n, 3), dtype=np.float64)
        sigma = np.zeros(n, dtype=np.float64)
        inside = self.inside_mask(pts)
        if inside.any():
            d_in = dirs[inside] if dirs is not None else None
            raw_sigma, raw_rgb, _, _ = self._forward_raw(pts[inside], d_in)
            sigma[inside] = softplus(raw_sigma)
            rgb[inside] = sigmoid(raw_rgb)
        return rgb, sigma

    def param_backward_query(self, pts, dirs, up_rgb, up_sigma, out_grad):
        pts = np.asarray(pts, dtype=np.float64)
        inside = self.inside_mask(pts)
        if not inside.any():
            return
        d_in = dirs[inside] if dirs is not None else None
        raw_sigma, raw_rgb, cache, cfeat = self._forward_raw(pts[inside], d_in)
        up_raw_sigma = up_sigma[inside] * sigmoid(raw_sigma)
        s = sigmoid(raw_rgb)
        up_raw_rgb = up_rgb[inside] * s * (1.0 - s)

        layers = self._layers()
        grads = self._layers(out_grad)
        n_trunk = len(self.hidden)
        gws, gbs = grads[n_trunk]
        gws += up_raw_sigma[None, :] @ cache[-1]
        gbs += up_raw_sigma.sum()
        gwc, gbc = grads[n_trunk + 1]
        gwc += up_raw_rgb.T @ cfeat
        gbc += up_raw_rgb.sum(axis=0)

        h = self.hidden[-1]
        delta = up_raw_sigma[:, None] @ layers[n_trunk][0]
        delta += up_raw_rgb @ layers[n_trunk + 1][0][:, :h]
        for l in range(n_trunk - 1, -1, -1):
            delta = delta * (cache[l + 1] > 0.0)
            gw, gb = grads[l]
            gw += delta.T @ cache[l]
            gb += delta.sum(axis=0)
            if l > 0:
                delta = delta @ layers[l][0]

    @property
    def fd_step(self):
        return FD_STEP_FRACTION * float(np.linalg.norm(self.bbox_max - self.bbox_min))

    def _sigma_only(self, pts):
        return self.query_batch(pts)[1]

    def density_grad_batch(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        n = pts.shape[0]
        out = np.zeros((n, 3), dtype=np.float64)
        inside = self.inside_mask(pts)
        if not inside.any():
            return out
        p = pts[inside]
        h = self.fd_step
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            out[inside, axis] = (self._sigma_only(p + step) - self._sigma_only(p - step)) / (2.0 * h)
        return out

    def param_backward_density_grad(self, pts, up_g, out_grad):
        pts = np.asarray(pts, dtype=np.float64)
        inside = self.inside_mask(pts)
        if not inside.any():
            return
        p = pts[inside]
        ug = up_g[inside]
        h = self.fd_step
        zeros_rgb = np.zeros((p.shape[0], 3), dtype=np.float64)
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = h
            coeff = ug[:, axis] / (2.0 * h)
            self.param_backward_query(p + step, None, zeros_rgb, coeff, out_grad)
            self.param_backward_query(p - step, None, zeros_rgb, -coeff, out_grad)
