import numpy as np
import pytest

from edgefield.edgemap import EdgeIndicatorMap
from edgefield.errors import InputDomainError
from edgefield.geometry import (Camera, PixelPatch, Ray, look_at_rotation,
                                make_patch, pixel_to_ray, project_point,
                                rays_for_pixels)

from .conftest import rng


def identity_camera(**kw):
    defaults = dict(width=64, height=48, fx=100.0, fy=100.0, cx=32.0, cy=24.0,
                    rotation=np.eye(3), translation=np.zeros(3), near=0.5, far=5.0)
    defaults.update(kw)
    return Camera(**defaults)


def random_camera(r):
    q, _ = np.linalg.qr(r.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return Camera(width=32, height=24, fx=45.0 + 20 * r.random(), fy=50.0,
                  cx=15.0 + 2 * r.random(), cy=11.5, rotation=q,
                  translation=r.normal(size=3), near=0.3, far=6.0)


class TestCamera:
    def test_rejects_non_orthonormal_rotation(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-3
        with pytest.raises(InputDomainError):
            identity_camera(rotation=bad)

    def test_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(InputDomainError):
            identity_camera(rotation=flip)

    def test_rejects_bad_bounds(self):
        with pytest.raises(InputDomainError):
            identity_camera(near=2.0, far=1.0)
        with pytest.raises(InputDomainError):
            identity_camera(near=0.0)
        with pytest.raises(InputDomainError):
            identity_camera(fx=-1.0)
        with pytest.raises(InputDomainError):
            identity_camera(width=1)


class TestRay:
    def test_requires_unit_direction(self):
        with pytest.raises(InputDomainError):
            Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, 2.0]),
                t_near=0.1, t_far=1.0)

    def test_requires_ordered_bounds(self):
        with pytest.raises(InputDomainError):
            Ray(origin=np.zeros(3), direction=np.array([0.0, 0.0, 1.0]),
                t_near=1.0, t_far=1.0)


class TestPixelToRay:
    def test_principal_ray(self):
        cam = identity_camera(cx=10.5, cy=7.5)
        ray = pixel_to_ray(cam, 10, 7)
        np.testing.assert_allclose(ray.direction, [0.0, 0.0, 1.0], atol=1e-12)
        assert ray.t_near == cam.near and ray.t_far == cam.far

    def test_one_column_offset(self):
        # hand evaluation: camera-frame direction (0.01, 0, 1), normalized
        cam = identity_camera(cx=10.5, cy=7.5)
        ray = pixel_to_ray(cam, 11, 7)
        expected = np.array([0.01, 0.0, 1.0])
        expected /= np.linalg.norm(expected)
        np.testing.assert_allclose(ray.direction, expected, atol=1e-15)

    def test_directions_unit_norm(self):
        r = rng(3)
        for _ in range(20):
            cam = random_camera(r)
            u = int(r.integers(cam.width))
            v = int(r.integers(cam.height))
            ray = pixel_to_ray(cam, u, v)
            assert abs(np.linalg.norm(ray.direction) - 1.0) < 1e-12

    def test_out_of_bounds_pixel(self):
        cam = identity_camera()
        with pytest.raises(InputDomainError):
            pixel_to_ray(cam, cam.width, 0)
        with pytest.raises(InputDomainError):
            pixel_to_ray(cam, 0, -1)

    def test_pure_and_deterministic(self):
        cam = identity_camera()
        r1 = pixel_to_ray(cam, 5, 6)
        r2 = pixel_to_ray(cam, 5, 6)
        np.testing.assert_array_equal(r1.direction, r2.direction)
        np.testing.assert_array_equal(r1.origin, r2.origin)

    def test_round_trip_projection(self):
        r = rng(11)
        for _ in range(50):
            cam = random_camera(r)
            u = int(r.integers(cam.width))
            v = int(r.integers(cam.height))
            ray = pixel_to_ray(cam, u, v)
            t = cam.near + (cam.far - cam.near) * r.random()
            pu, pv, _ = project_point(cam, ray.point_at(t))
            assert abs(pu - (u + 0.5)) < 1e-6
            assert abs(pv - (v + 0.5)) < 1e-6

    def test_batch_matches_scalar(self):
        r = rng(7)
        cam = random_camera(r)
        uv = np.array([[0, 0], [3, 5], [31, 23]])
        origins, dirs = rays_for_pixels(cam, uv)
        for row, (u, v) in enumerate(uv):
            ray = pixel_to_ray(cam, int(u), int(v))
            # BLAS may order the (tiny) matmul differently per batch shape
            np.testing.assert_allclose(dirs[row], ray.direction, rtol=0, atol=1e-14)
            np.testing.assert_array_equal(origins[row], ray.origin)


class TestLookAt:
    def test_rotation_is_special_orthogonal(self):
        r = rng(5)
        for _ in range(20):
            eye = r.normal(size=3) * 3
            target = r.normal(size=3)
            if np.linalg.norm(target - eye) < 1e-3:
                continue
            rot = look_at_rotation(eye, target)
            np.testing.assert_allclose(rot.T @ rot, np.eye(3), atol=1e-12)
            assert np.linalg.det(rot) > 0
            forward = rot @ np.array([0.0, 0.0, 1.0])
            expected = (target - eye) / np.linalg.norm(target - eye)
            np.testing.assert_allclose(forward, expected, atol=1e-12)


class TestMakePatch:
    def indicator(self, values):
        return EdgeIndicatorMap(values=np.asarray(values, dtype=np.uint8))

    def test_all_non_edge(self):
        emap = self.indicator(np.ones((4, 4)))
        patch = make_patch(emap, 0, (1, 1))
        np.testing.assert_array_equal(patch.edge, [1, 1, 1, 1])

    def test_all_edge(self):
        emap = self.indicator(np.zeros((4, 4)))
        patch = make_patch(emap, 2, (0, 0))
        np.testing.assert_array_equal(patch.edge, [0, 0, 0, 0])

    def test_edge_at_top_left_member(self):
        # hand-built 4x4 indicator: edge (e=0) only at pixel (1, 1)
        vals = np.ones((4, 4), dtype=np.uint8)
        vals[1, 1] = 0
        patch = make_patch(self.indicator(vals), 0, (1, 1))
        np.testing.assert_array_equal(patch.edge, [0, 1, 1, 1])

    def test_block_must_fit(self):
        emap = self.indicator(np.ones((4, 4)))
        with pytest.raises(InputDomainError):
            make_patch(emap, 0, (3, 0))
        with pytest.raises(InputDomainError):
            make_patch(emap, 0, (0, 3))

    def test_patch_rejects_non_block(self):
        with pytest.raises(InputDomainError):
            PixelPatch(image_index=0,
                       pixels=np.array([[0, 0], [2, 0], [0, 1], [1, 1]]),
                       edge=np.array([1, 1, 1, 1]))
