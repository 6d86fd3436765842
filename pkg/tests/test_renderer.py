import math

import numpy as np
import pytest

from edgefield.errors import InputDomainError
from edgefield.field import VoxelGridField
from edgefield.geometry import Ray
from edgefield.renderer import (RaySamples, composite, make_ray_samples, render,
                                render_backward, sample_ray, sample_ts_batch)

from .conftest import rng
from .oracles import continuous_render, finite_diff

UNIT_Z = np.array([0.0, 0.0, 1.0])


def ray_z(t_near=0.0, t_far=1.0):
    return Ray(origin=np.zeros(3), direction=UNIT_Z, t_near=t_near, t_far=t_far)


class ProfileField:
    """Test helper: density/color depend on z only, via given callables."""

    def __init__(self, sigma_fn, color_fn):
        self.sigma_fn = sigma_fn
        self.color_fn = color_fn
        self.theta = np.zeros(0)
        self.bbox_min = np.full(3, -100.0)
        self.bbox_max = np.full(3, 100.0)

    @property
    def n_params(self):
        return 0

    def query_batch(self, pts, dirs=None):
        z = pts[:, 2]
        rgb = np.stack([self.color_fn(z)] * 3, axis=1)
        return rgb, self.sigma_fn(z)

    def density_grad_batch(self, pts):
        return np.zeros_like(pts)


class TestSampleRay:
    def test_midpoints(self):
        t = sample_ray(ray_z(), 4)
        np.testing.assert_allclose(t, [0.125, 0.375, 0.625, 0.875], atol=1e-15)

    def test_stratified_stays_in_bins(self):
        r = rng(0)
        ray = ray_z(2.0, 6.0)
        for _ in range(10):
            t = sample_ray(ray, 16, rng=r, stratified=True)
            edges = 2.0 + 4.0 * np.arange(17) / 16
            assert ((t >= edges[:-1]) & (t < edges[1:])).all()

    def test_seed_reproducibility(self):
        t1 = sample_ray(ray_z(), 8, rng=rng(42), stratified=True)
        t2 = sample_ray(ray_z(), 8, rng=rng(42), stratified=True)
        np.testing.assert_array_equal(t1, t2)

    def test_needs_two_samples(self):
        with pytest.raises(InputDomainError):
            sample_ray(ray_z(), 1)


class TestRenderForward:
    def test_empty_scene(self):
        samples = RaySamples(t=np.array([0.25, 0.75]), delta=np.array([0.5, 0.25]),
                             sigma=np.zeros(2), rgb=np.full((2, 3), 0.9))
        out = render(None, ray_z(), samples)
        np.testing.assert_array_equal(out.color, 0.0)
        assert out.depth == 0.0 and out.t_rest == 1.0 and out.opacity == 0.0

    def test_single_sample_half_weight(self):
        # alpha = 1 - exp(-ln 2) = 1/2 exactly
        sd = math.log(2.0)
        samples = RaySamples(t=np.array([0.3]), delta=np.array([1.0]),
                             sigma=np.array([sd]), rgb=np.array([[1.0, 0.6, 0.2]]))
        out = render(None, ray_z(), samples)
        assert out.weights[0] == pytest.approx(0.5, abs=1e-15)
        np.testing.assert_allclose(out.color, [0.5, 0.3, 0.1], atol=1e-15)

    def test_opaque_slab_depth(self):
        entry = 0.6
        field = ProfileField(lambda z: np.where(z >= entry, 1e5, 0.0),
                             lambda z: np.full_like(z, 0.8))
        ray = ray_z(0.0, 1.0)
        k = 256
        out = render(field, ray, sample_ray(ray, k))
        seg = 1.0 / k
        assert abs(out.depth - entry) <= seg
        assert out.opacity > 0.999

    def test_partition_of_unity_and_monotone_transmittance(self):
        r = rng(1)
        for _ in range(25):
            k = int(r.integers(2, 64))
            sigma = r.uniform(0, 30, size=(1, k))
            t = np.sort(r.uniform(0, 4, size=(1, k)), axis=1)
            delta = r.uniform(0.01, 0.3, size=(1, k))
            rgb = r.uniform(0, 1, size=(1, k, 3))
            fw = composite(sigma, rgb, t, delta)
            total = fw["weights"].sum() + fw["t_rest"][0]
            assert abs(total - 1.0) <= 1e-6
            t_seq = np.concatenate([fw["trans"][0], fw["t_rest"]])
            assert (np.diff(t_seq) <= 1e-15).all()
            assert t_seq[-1] >= 0

    def test_quadrature_convergence(self):
        # smooth analytic profile; error vs the dense reference should shrink
        # by >= 1.8x per doubling of K
        sigma_fn = lambda z: 0.9 + 0.8 * z
        color_fn = lambda z: 0.5 * (np.sin(3.0 * z) + 1.0)
        field = ProfileField(sigma_fn, color_fn)
        ref = continuous_render(sigma_fn, color_fn, 0.0, 2.0)
        ray = ray_z(0.0, 2.0)
        errs = []
        for k in (64, 128, 256, 512):
            out = render(field, ray, sample_ray(ray, k))
            errs.append(abs(out.color[0] - ref))
        for a, b in zip(errs, errs[1:]):
            assert a / b >= 1.8

    def test_normals_composited_with_guard(self):
        # one sample has a zero density gradient: contributes zero, no NaN
        samples = RaySamples(t=np.array([0.2, 0.5]), delta=np.array([0.3, 0.5]),
                             sigma=np.array([1.0, 1.0]),
                             rgb=np.full((2, 3), 0.5),
                             grad_sigma=np.array([[0.0, 0.0, 0.0], [0.0, 3.0, 0.0]]))
        out = render(None, ray_z(), samples)
        assert np.isfinite(out.normal).all()
        w2 = out.weights[1]
        np.testing.assert_allclose(out.normal, [0.0, -w2, 0.0], atol=1e-15)

    def test_rejects_unsorted_samples(self):
        with pytest.raises(InputDomainError):
            RaySamples(t=np.array([0.5, 0.4]), delta=np.array([0.1, 0.1]),
                       sigma=np.zeros(2), rgb=np.zeros((2, 3)))

    def test_opacity_normalized_depth_within_bounds(self):
        # z / max(opacity, eps) is a convex combination of sample distances
        r = rng(6)
        for _ in range(20):
            k = int(r.integers(2, 32))
            t = np.sort(r.uniform(1.0, 4.0, size=(1, k)), axis=1)
            sigma = r.uniform(0, 5, size=(1, k))
            delta = r.uniform(0.01, 0.2, size=(1, k))
            fw = composite(sigma, r.uniform(0, 1, size=(1, k, 3)), t, delta)
            opacity = fw["weights"].sum()
            if opacity > 1e-3:
                z_norm = fw["depth"][0] / max(opacity, 1e-12)
                assert t[0, 0] - 1e-9 <= z_norm <= t[0, -1] + 1e-9


class TestRenderBackward:
    def make_field_and_ray(self, seed, res=16):
        r = rng(seed)
        field = VoxelGridField(res, (-1, -1, -1), (1, 1, 1))
        field.theta[:] = r.normal(0.0, 0.6, size=field.n_params)
        origin = np.array([0.3, -0.2, -2.5])
        target = r.uniform(-0.5, 0.5, size=3)
        d = target - origin
        d /= np.linalg.norm(d)
        ray = Ray(origin=origin, direction=d, t_near=1.0, t_far=4.5)
        return field, ray, r

    def test_zero_upstream(self):
        field, ray, _ = self.make_field_and_ray(0)
        samples = make_ray_samples(field, ray, sample_ray(ray, 16), want_normals=True)
        grad = render_backward(field, ray, samples, np.zeros(3), 0.0, np.zeros(3))
        assert (grad == 0).all()

    def test_finite_difference_full_upstream(self):
        field, ray, r = self.make_field_and_ray(1)
        ts = sample_ray(ray, 32)
        up_c = r.normal(size=3)
        up_z = float(r.normal())
        up_n = r.normal(size=3)
        samples = make_ray_samples(field, ray, ts, want_normals=True)
        grad = render_backward(field, ray, samples, up_c, up_z, up_n)

        def objective():
            s = make_ray_samples(field, ray, ts, want_normals=True)
            out = render(field, ray, s)
            return float(up_c @ out.color + up_z * out.depth + up_n @ out.normal)

        idx = np.nonzero(np.abs(grad) > 1e-3 * np.abs(grad).max())[0]
        idx = r.choice(idx, size=min(80, idx.size), replace=False)
        fd = finite_diff(objective, field.theta, idx, h=1e-6)
        denom = np.maximum(np.maximum(np.abs(fd), np.abs(grad[idx])),
                           1e-4 * np.abs(grad).max())
        assert (np.abs(fd - grad[idx]) / denom).max() < 1e-5

    def test_untouched_cells_have_zero_gradient(self):
        field, ray, r = self.make_field_and_ray(2)
        ts = sample_ray(ray, 24)
        samples = make_ray_samples(field, ray, ts, want_normals=True)
        grad = render_backward(field, ray, samples, np.ones(3), 1.0, np.ones(3))
        pts = ray.origin[None] + ts[:, None] * ray.direction[None]
        inside = pts[np.logical_and(pts >= -1, pts <= 1).all(axis=1)]
        cell = field.cell_size
        touched = set()
        for p in inside:
            i = np.clip(np.floor((p - field.bbox_min) / cell).astype(int), 0,
                        field.resolution - 2)
            for bx in (0, 1):
                for by in (0, 1):
                    for bz in (0, 1):
                        touched.add((i[0] + bx, i[1] + by, i[2] + bz))
        g = grad.reshape(4, *field.resolution)
        nz = np.argwhere(np.abs(g).sum(axis=0) > 0)
        for v in map(tuple, nz):
            assert v in touched


class TestBatchShapes:
    def test_batch_ts_shape_and_bounds(self):
        ts = sample_ts_batch(1.0, 3.0, 7, 5)
        assert ts.shape == (7, 5)
        assert (ts > 1.0).all() and (ts < 3.0).all()
