"""Benchmark the compiled kernel core against the numpy fallback.

Times the four grid kernels on a realistic training workload shape and,
optionally, a full train_step on a tiny in-memory dataset (the step always
runs through whichever backend was selected at import).
"""
from __future__ import annotations

import time

import numpy as np

from . import kernels


def _time(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _workload(points, resolution, seed=0):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    raw = rng.normal(0.0, 0.5, size=(4, resolution, resolution, resolution))
    bmin = np.array([-1.0, -1.0, -1.0])
    bmax = np.array([1.0, 1.0, 1.0])
    pts = rng.uniform(-1.1, 1.1, size=(points, 3))  # some points land outside
    up_sigma = rng.normal(size=points)
    up_rgb = rng.normal(size=(points, 3))
    up_g = rng.normal(size=(points, 3))
    return raw, bmin, bmax, pts, up_sigma, up_rgb, up_g


def run_benchmark(points=200_000, resolution=64, repeat=5, train_step=False) -> str:
    raw, bmin, bmax, pts, up_sigma, up_rgb, up_g = _workload(points, resolution)
    grad = np.zeros_like(raw)
    names = kernels.available_backends()
    rows = {}
    for name in names:
        mod = kernels.get_backend(name)
        rows[name] = {
            "query": _time(lambda: mod.grid_query(raw, bmin, bmax, pts), repeat),
            "query_bwd": _time(lambda: mod.grid_query_bwd(raw, bmin, bmax, pts,
                                                          up_sigma, up_rgb, grad), repeat),
            "density_grad": _time(lambda: mod.grid_density_grad(raw, bmin, bmax, pts), repeat),
            "density_bwd": _time(lambda: mod.grid_density_grad_bwd(raw, bmin, bmax, pts,
                                                                   up_g, grad), repeat),
        }
    ops = ["query", "query_bwd", "density_grad", "density_bwd"]
    lines = [f"kernel benchmark: {points} points, {resolution}^3 grid, best of {repeat}",
             f"active backend: {kernels.BACKEND}",
             f"{'op':<14}" + "".join(f"{n:>12}" for n in names)
             + ("     speedup" if len(names) == 2 else "")]
    for op in ops:
        cells = "".join(f"{rows[n][op] * 1e3:>10.2f}ms" for n in names)
        if len(names) == 2:
            speed = rows[names[0]][op] / rows[names[1]][op]
            cells += f"{speed:>11.1f}x"
        lines.append(f"{op:<14}" + cells)
    if train_step:
        lines.append(_train_step_bench())
    return "\n".join(lines)


def _train_step_bench(iterations=20):
    """End-to-end step timing on a small synthetic dataset (active backend)."""
    from . import synthgen, trainer

    scene = synthgen.build_scene("box")
    rig = synthgen.default_rig(n_train=2, n_test=0, size=48)
    cams = rig.cameras()
    images, depths, normals = [], [], []
    for cam in cams:
        rgb, depth, normal = synthgen.render_ground_truth(scene, cam)
        images.append(rgb)
        depths.append(depth)
        normals.append(normal)
    from .dataio import Dataset

    ds = Dataset(images=np.stack(images), depths=np.stack(depths),
                 normals=np.stack(normals), cameras=cams,
                 train_indices=[0, 1], test_indices=[])
    cfg = trainer.TrainConfig(iterations=iterations, grid_resolution=48,
                              patches_per_iter=128, samples_per_ray=48)
    edge_maps = trainer.prepare_edge_maps(ds, cfg)
    field = cfg.build_field()
    state = trainer.TrainState.fresh(field, cfg.seed)
    t0 = time.perf_counter()
    for _ in range(iterations):
        trainer.train_step(state, ds, edge_maps, cfg)
    dt = (time.perf_counter() - t0) / iterations
    return (f"train_step ({cfg.patches_per_iter} patches x {cfg.samples_per_ray} samples, "
            f"{kernels.BACKEND} backend): {dt * 1e3:.1f} ms/iter")
