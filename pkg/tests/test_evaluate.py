import math

import pytest

from edgefield import evaluate, metrics, renderer, synthgen
from edgefield.errors import ConfigurationError
from edgefield.field import VoxelGridField


class TestEvaluate:
    def test_scene_field_scores_high_psnr(self, disk_dataset, box_scene, tmp_path):
        path, ds = disk_dataset
        k = 256
        delta = (ds.cameras[0].far - ds.cameras[0].near) / k
        field = synthgen.SceneField(box_scene, sigma_inside=1e4, pad=1.5 * delta)
        report = evaluate.evaluate(field, path, split="test",
                                   out_dir=str(tmp_path / "eval"), k=k)
        # ground-truth-matching field: limited only by 8-bit quantization
        assert all(p > 40.0 for p in report.psnr)
        assert all(s > 0.98 for s in report.ssim)

    def test_empty_field_matches_background_psnr(self, disk_dataset):
        from edgefield.dataio import load_dataset

        path, _ = disk_dataset
        ds = load_dataset(path)  # evaluate() sees the 8-bit quantized images
        field = VoxelGridField(8, (-1.0, -0.75, -1.0), (1.0, 0.45, 1.0))
        field.raw[0] = -30.0  # effectively empty
        report = evaluate.evaluate(field, path, split="test", k=32)
        for j, idx in enumerate(report.view_indices):
            gt = ds.images[idx]
            # closed form: rendered image is exactly black
            expected = 10.0 * math.log10(1.0 / float((gt ** 2).mean()))
            assert report.psnr[j] == pytest.approx(expected, abs=1e-6)

    def test_report_has_record_per_view(self, disk_dataset, tmp_path):
        path, ds = disk_dataset
        field = VoxelGridField(8, (-1.0, -0.75, -1.0), (1.0, 0.45, 1.0))
        out = tmp_path / "eval"
        report = evaluate.evaluate(field, path, split="test", out_dir=str(out), k=16)
        text = (out / "report.txt").read_text()
        for idx in ds.test_indices:
            assert f"view_{idx:03d}_psnr:" in text
            assert (out / f"view_{idx:03d}.png").is_file()
            assert (out / f"view_{idx:03d}_depth.pfm").is_file()
        assert "mean_psnr:" in text and "runtime_seconds:" in text
        assert len(report.view_indices) == len(ds.test_indices)

    def test_deterministic(self, disk_dataset):
        path, _ = disk_dataset
        field = VoxelGridField(8, (-1.0, -0.75, -1.0), (1.0, 0.45, 1.0))
        r1 = evaluate.evaluate(field, path, split="test", k=16)
        r2 = evaluate.evaluate(field, path, split="test", k=16)
        assert r1.psnr == r2.psnr and r1.depth_mae == r2.depth_mae

    def test_mismatched_field_bbox_rejected(self, disk_dataset):
        path, _ = disk_dataset
        field = VoxelGridField(8, (50.0, 50.0, 50.0), (51.0, 51.0, 51.0))
        with pytest.raises(ConfigurationError):
            evaluate.evaluate(field, path, split="test", k=16)

    def test_unknown_split_rejected(self, disk_dataset):
        path, _ = disk_dataset
        field = VoxelGridField(8, (-1.0, -0.75, -1.0), (1.0, 0.45, 1.0))
        with pytest.raises(ConfigurationError):
            evaluate.evaluate(field, path, split="validation", k=16)


class TestPsnrSanity:
    def test_metrics_on_rendered_vs_traced(self, small_dataset, box_scene):
        # renderer and tracer agree well enough that PSNR is high even at K=64
        cam = small_dataset.cameras[0]
        delta = (cam.far - cam.near) / 64
        field = synthgen.SceneField(box_scene, pad=1.5 * delta)
        out = renderer.render_image(field, cam, 64)
        assert metrics.psnr(out["color"], small_dataset.images[0]) > 35.0
