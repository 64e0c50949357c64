"""Command-line interface.

Subcommands: gen-scene, train, render, eval, ablate. Exit codes:
0 success, 2 configuration error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .checkpoint import load_ply, save_ply
from .config import TrainConfig
from .core import ConfigError, ContractError, DivergenceError
from .harness import (config_hash, eval_heldout, run_ablation, write_ablation_csv,
                      write_eval_csv)
from .imageio import write_png, write_ppm
from .renderer import render
from .scene import SceneSpec, gen_scene, load_scene, save_scene
from .training import train_baseline, train_segs, write_metrics_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def _parse_size(text):
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError as exc:
        raise ConfigError(f"--size expects WxH, got {text!r}") from exc


def _cmd_gen_scene(args):
    width, height = _parse_size(args.size)
    spec = SceneSpec(n_gaussians=args.gaussians, n_cams=args.cams,
                     n_train=args.train_views, width=width, height=height,
                     orbit_radius=args.orbit_radius, random_init=args.random_init,
                     seed=args.seed)
    scene = gen_scene(spec)
    save_scene(scene, args.out)
    print(f"wrote scene with {args.gaussians} Gaussians, "
          f"{len(scene.train_cams)} train / {len(scene.heldout_cams)} held-out views "
          f"to {args.out}")
    return EXIT_OK


def _cmd_train(args):
    scene = load_scene(args.scene)
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig().validate()
    if args.mode == "baseline":
        model, rows = train_baseline(scene, cfg)
    else:
        pair, rows = train_segs(scene, cfg)
        model = pair.sigma_model
    save_ply(model, args.out)
    if args.log:
        write_metrics_csv(rows, args.log)
    final = rows[-1]
    print(f"trained {args.mode} for {cfg.total_iters} iterations "
          f"(config {config_hash(cfg)}); "
          f"held-out PSNR {final.psnr_heldout:.2f} dB; checkpoint {args.out}")
    return EXIT_OK


def _cmd_render(args):
    scene = load_scene(args.scene)
    cloud = load_ply(args.ckpt)
    cams = scene.train_cams + scene.heldout_cams
    if not 0 <= args.cam_index < len(cams):
        raise ConfigError(f"--cam-index out of range [0, {len(cams) - 1}]")
    image = render(cloud, cams[args.cam_index], tuple(args.background)).image
    if args.out.lower().endswith(".png"):
        write_png(image, args.out)
    else:
        write_ppm(image, args.out)
    print(f"rendered camera {args.cam_index} to {args.out}")
    return EXIT_OK


def _cmd_eval(args):
    scene = load_scene(args.scene)
    cloud = load_ply(args.ckpt)
    report = eval_heldout(cloud, scene)
    write_eval_csv(report, args.out)
    print(f"held-out mean PSNR {report.mean_psnr:.2f} dB, "
          f"mean SSIM {report.mean_ssim:.4f}; report {args.out}")
    return EXIT_OK


def _cmd_ablate(args):
    scene = load_scene(args.scene)
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig().validate()
    results = run_ablation(scene, cfg, args.axis)
    write_ablation_csv(results, args.out)
    for label, report in results:
        print(f"{label}: held-out PSNR {report.mean_psnr:.2f} dB")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="duosplat",
        description="Desk-scale Gaussian splatting with dual-model training")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="generate a synthetic scene file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gaussians", type=int, default=200)
    p.add_argument("--cams", type=int, default=12)
    p.add_argument("--size", default="64x64", help="image size WxH")
    p.add_argument("--train-views", type=int, default=3)
    p.add_argument("--orbit-radius", type=float, default=2.2)
    p.add_argument("--random-init", action="store_true",
                   help="random initial points instead of noised ground truth")
    p.set_defaults(func=_cmd_gen_scene)

    p = sub.add_parser("train", help="train a model on a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None, help="flat JSON TrainConfig")
    p.add_argument("--mode", choices=["segs", "baseline"], default="segs")
    p.add_argument("--out", required=True, help="output checkpoint (.ply)")
    p.add_argument("--log", default=None, help="metrics CSV path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("render", help="render one camera from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True,
                   help="scene file providing the camera list (train then held-out)")
    p.add_argument("--cam-index", type=int, required=True)
    p.add_argument("--out", required=True, help=".ppm (or .png with Pillow)")
    p.add_argument("--background", type=float, nargs=3, default=(0.0, 0.0, 0.0))
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out views")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run one ablation axis")
    p.add_argument("--axis", choices=["interval", "omega", "strategy"], required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="table CSV path")
    p.set_defaults(func=_cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ContractError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
