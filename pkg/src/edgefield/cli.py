"""Umbrella command-line interface.

Verbs: gen, edges, train, render, eval, gradcheck, ablate, bench — the full
pipeline is `gen -> edges -> train -> render/eval`. Exit codes: 0 on success,
2 on configuration errors, 3 on numerical failures.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import bench as bench_mod
from . import edgemap, evaluate as eval_mod, renderer, synthgen, trainer
from .dataio import (float01_to_u8, load_cameras_txt, load_dataset, load_png,
                     save_pfm, save_png)
from .errors import ConfigurationError, InputDomainError, NumericalError
from .field import load_field

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _cmd_gen(args):
    scene = synthgen.build_scene(args.scene)
    ds = synthgen.generate_dataset(scene, args.out, n_train=args.views_train,
                                   n_test=args.views_test, size=args.size)
    print(f"wrote {ds.n_views} views ({len(ds.train_indices)} train, "
          f"{len(ds.test_indices)} test) to {args.out}")
    return EXIT_OK


def _input_images(input_dir):
    """RGB images for edge extraction: dataset rgb/ subdir or a flat PNG dir."""
    rgb_dir = os.path.join(input_dir, "rgb")
    directory = rgb_dir if os.path.isdir(rgb_dir) else input_dir
    names = sorted(n for n in os.listdir(directory) if n.endswith(".png"))
    if not names:
        raise ConfigurationError(f"no PNG images found under {input_dir}")
    return [os.path.join(directory, n) for n in names]


def _cmd_edges(args):
    os.makedirs(args.out, exist_ok=True)
    paths = _input_images(args.input)
    for i, path in enumerate(paths):
        arr = load_png(path)
        if args.method == "canny":
            if arr.ndim != 3:
                raise ConfigurationError(f"{path} is not an RGB image")
            strength = edgemap.canny(edgemap.to_grayscale(arr.astype(np.float64)),
                                     sigma=args.sigma, low=args.low, high=args.high)
        else:  # external: ingest precomputed edge-strength maps
            strength = arr.astype(np.float64)
            if strength.ndim == 3:
                strength = edgemap.to_grayscale(strength)
        out_path = os.path.join(args.out, f"{i:03d}.png")
        save_png(out_path, np.round(strength).astype(np.uint8))
        ind = edgemap.indicator_from_strength(strength, args.tau_e)
        print(f"{out_path}: non-edge coverage {100.0 * ind.non_edge_fraction():.1f}% "
              f"at tau_e={args.tau_e:g}")
    return EXIT_OK


def _cmd_train(args):
    cfg = trainer.load_config(args.config) if args.config else trainer.TrainConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.deterministic:
        cfg = replace(cfg, deterministic=True)
    if args.iterations is not None:
        cfg = replace(cfg, iterations=args.iterations)
    result = trainer.run_training(cfg, args.data, args.out, resume_from=args.resume)
    print(f"finished {cfg.iterations} iterations in {result['step_seconds']:.1f}s; "
          f"checkpoint {result['checkpoint']}")
    return EXIT_OK


def _camera_for_pose(args):
    if args.data is None and not os.path.isfile(args.pose):
        raise ConfigurationError("--pose needs a camera file or --data with an index")
    if os.path.isfile(args.pose):
        cams = load_cameras_txt(args.pose)
        if not cams:
            raise ConfigurationError(f"{args.pose} contains no camera lines")
        return cams[0]
    try:
        index = int(args.pose)
    except ValueError as exc:
        raise ConfigurationError(f"--pose must be a view index or a camera file, "
                                 f"got {args.pose!r}") from exc
    ds = load_dataset(args.data)
    if not 0 <= index < ds.n_views:
        raise ConfigurationError(f"view index {index} out of range (0..{ds.n_views - 1})")
    return ds.cameras[index]


def _cmd_render(args):
    field = load_field(args.checkpoint)
    cam = _camera_for_pose(args)
    os.makedirs(args.out, exist_ok=True)
    out = renderer.render_image(field, cam, args.samples, want_normals=args.normals)
    stem = os.path.join(args.out, "render")
    save_png(stem + ".png", float01_to_u8(out["color"]))
    save_pfm(stem + "_depth.pfm", out["depth"])
    if args.normals:
        save_pfm(stem + "_normal.pfm", out["normal"])
    print(f"wrote {stem}.png")
    return EXIT_OK


def _cmd_eval(args):
    report = eval_mod.evaluate(args.checkpoint, args.data, split=args.split,
                               out_dir=args.out, k=args.samples)
    print(report.to_text(), end="")
    return EXIT_OK


def _cmd_gradcheck(args):
    report = trainer.gradcheck(trials=args.trials, seed=args.seed)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _cmd_ablate(args):
    cfg = trainer.load_config(args.config) if args.config else trainer.TrainConfig()
    if args.iterations is not None:
        cfg = replace(cfg, iterations=args.iterations)
    rows = eval_mod.run_ablation(cfg, args.data, args.out,
                                 include_global=args.with_global)
    print(eval_mod.format_ablation_table(rows), end="")
    return EXIT_OK


def _cmd_bench(args):
    print(bench_mod.run_benchmark(points=args.points, resolution=args.resolution,
                                  repeat=args.repeat, train_step=args.train_step))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="edgefield",
                                description="edge-guided sparse-view radiance field toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="trace a synthetic sparse-view dataset")
    g.add_argument("--scene", choices=("box", "two-object"), default="box")
    g.add_argument("--views-train", type=int, default=3)
    g.add_argument("--views-test", type=int, default=5)
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen)

    e = sub.add_parser("edges", help="extract or ingest edge-strength maps")
    e.add_argument("--input", required=True)
    e.add_argument("--method", choices=("canny", "external"), default="canny")
    e.add_argument("--tau-e", type=float, default=125.0, dest="tau_e")
    e.add_argument("--sigma", type=float, default=1.4)
    e.add_argument("--low", type=float, default=50.0)
    e.add_argument("--high", type=float, default=150.0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=_cmd_edges)

    t = sub.add_parser("train", help="optimize a field on a dataset")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--iterations", type=int, default=None)
    t.add_argument("--resume", default=None)
    t.set_defaults(func=_cmd_train)

    r = sub.add_parser("render", help="render one view from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--pose", required=True, help="dataset view index or camera file")
    r.add_argument("--data", default=None)
    r.add_argument("--out", required=True)
    r.add_argument("--samples", type=int, default=192)
    r.add_argument("--normals", action="store_true")
    r.set_defaults(func=_cmd_render)

    v = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--data", required=True)
    v.add_argument("--split", choices=("train", "test", "all"), default="test")
    v.add_argument("--out", default=None)
    v.add_argument("--samples", type=int, default=192)
    v.set_defaults(func=_cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    c.add_argument("--trials", type=int, default=20)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=_cmd_gradcheck)

    a = sub.add_parser("ablate", help="baseline/+depth/+normal/full study")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config", default=None)
    a.add_argument("--iterations", type=int, default=None)
    a.add_argument("--with-global", action="store_true", dest="with_global")
    a.set_defaults(func=_cmd_ablate)

    b = sub.add_parser("bench", help="compare kernel backends")
    b.add_argument("--points", type=int, default=200_000)
    b.add_argument("--resolution", type=int, default=64)
    b.add_argument("--repeat", type=int, default=5)
    b.add_argument("--train-step", action="store_true", dest="train_step")
    b.set_defaults(func=_cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, InputDomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc} (iteration {exc.iteration}, term {exc.term})",
              file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
