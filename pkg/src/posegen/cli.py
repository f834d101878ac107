"""Command-line entry points: rasterize, train, synthesize, evaluate, and a
synthetic micro-dataset generator.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.  All
commands are deterministic given their seeds when POSEGEN_NUM_WORKERS=0
(the default), which pins the math libraries to one thread.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .config import ConfigError, build_perceptual, load_run_config
from .data import DatasetError, load_image, scan_dataset
from .metrics import evaluate_folder, load_classifier, match_image_pairs
from .microdata import MicrodataConfig, make_microdataset
from .posemap import (KeypointSchemaError, load_keypoints, rasterize_pose,
                      write_pose_png)
from .trainer import fit, load_generator, make_state, restore_state

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

MAX_SOURCES = 5


def _size_arg(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    try:
        if len(parts) != 2:
            raise ValueError
        h, w = int(parts[0]), int(parts[1])
        if h <= 0 or w <= 0:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW with positive ints, "
                                         f"got {text!r}") from None
    return h, w


def configure_workers() -> int:
    """Honor POSEGEN_NUM_WORKERS; 0 means fully single-threaded."""
    raw = os.environ.get("POSEGEN_NUM_WORKERS", "0")
    try:
        workers = max(0, int(raw))
    except ValueError:
        log.warning("ignoring non-integer POSEGEN_NUM_WORKERS=%r", raw)
        workers = 0
    torch.set_num_threads(max(1, workers))
    return workers


def _to_uint8_image(y: torch.Tensor) -> np.ndarray:
    """Map a (3, H, W) tensor in [-1, 1] to (H, W, 3) uint8 via
    round((v + 1) / 2 * 255)."""
    arr = y.detach().cpu().numpy()
    u8 = np.rint((arr + 1.0) / 2.0 * 255.0).clip(0, 255).astype(np.uint8)
    return u8.transpose(1, 2, 0)


def cmd_rasterize(args) -> int:
    kps = load_keypoints(args.keypoints)
    size = args.size if args.size is not None else kps.frame_size
    width = args.line_width if args.line_width > 0 else None
    pm = rasterize_pose(kps, size, line_width=width)
    write_pose_png(pm, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {}
    if args.mode is not None:
        overrides["train.mode"] = args.mode
    rc = load_run_config(args.config, overrides)
    phi = build_perceptual(rc)
    groups = scan_dataset(rc.data_root, "train",
                          image_size=rc.generator.image_size)
    if args.resume is not None:
        state = restore_state(args.resume, phi, cfg=rc.train)
    else:
        state = make_state(rc.train, rc.generator, phi,
                           disc_base_channels=rc.disc_base_channels,
                           disc_n_layers=rc.disc_n_layers)
    state.raster = rc.raster
    final = fit(groups, state, rc.out_dir)
    print(f"wrote {final}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    paths = [p for p in args.sources.split(",") if p]
    gen, _snapshot = load_generator(args.ckpt)
    mode = gen.cfg.mode
    if mode == "single" and len(paths) != 1:
        print(f"error: checkpoint is single-source but {len(paths)} sources "
              f"were given", file=sys.stderr)
        return EXIT_USAGE
    if not 1 <= len(paths) <= MAX_SOURCES:
        print(f"error: source count must be in [1, {MAX_SOURCES}], "
              f"got {len(paths)}", file=sys.stderr)
        return EXIT_USAGE

    size = tuple(gen.cfg.image_size)
    sources = torch.from_numpy(np.stack([load_image(p, size) for p in paths]))
    kps = load_keypoints(args.keypoints)
    pose = torch.from_numpy(rasterize_pose(kps, size).pixels)
    with torch.no_grad():
        y = gen.generate(sources, pose)
    Image.fromarray(_to_uint8_image(y[0]), mode="RGB").save(args.out,
                                                            format="PNG")
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    classifier = load_classifier(args.classifier) if args.classifier else None
    report = evaluate_folder(args.gen, args.target, classifier=classifier,
                             n_splits=args.splits)
    payload = report.as_dict()
    payload["tool_version"] = __version__
    payload["is_non_comparable"] = args.classifier is None
    print(json.dumps(payload, indent=2))
    if args.csv:
        matched, _, _ = match_image_pairs(args.gen, args.target)
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["name", "ssim"])
            for name, value in zip(matched, report.ssim_per_image):
                writer.writerow([name, f"{value:.6f}"])
    return EXIT_OK


def cmd_make_microdataset(args) -> int:
    cfg = MicrodataConfig(num_skus=args.skus, items_per_sku=args.items_per_sku,
                          image_size=args.size, seed=args.seed)
    manifest = make_microdataset(args.out, cfg)
    print(f"wrote {manifest['num_images']} images under {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posegen",
        description=__doc__,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--version", action="version",
                        version=f"posegen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rasterize", help="render a keypoint file to a pose map",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--keypoints", required=True, help="keypoint JSON file")
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--size", type=_size_arg, default=None,
                   help="output size HxW (default: %(default)s = "
                        "the keypoint frame size)")
    p.add_argument("--line-width", type=int, default=0,
                   help="limb width in pixels, 0 = auto-scale")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("train", help="train the generator and critics",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--mode", choices=("single", "multi"), default=None,
                   help="override train.mode from the config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("synthesize", help="generate one image from a checkpoint",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--sources", required=True,
                   help="comma-separated source image paths (1 to 5)")
    p.add_argument("--keypoints", required=True, help="target pose JSON file")
    p.add_argument("--out", required=True, help="output PNG path")
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("evaluate", help="SSIM and Inception Score over folders",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--gen", required=True, help="generated image folder")
    p.add_argument("--target", required=True, help="reference image folder")
    p.add_argument("--splits", type=int, default=10,
                   help="Inception Score split count")
    p.add_argument("--classifier", default=None,
                   help="classifier asset (.npz); omit for the toy fallback")
    p.add_argument("--csv", default=None,
                   help="also write per-image SSIM rows to this CSV file")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("make-microdataset",
                       help="generate a synthetic stick-figure dataset",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--skus", type=int, default=2, help="number of identities")
    p.add_argument("--items-per-sku", type=int, default=3,
                   help="views per identity (2 to 5)")
    p.add_argument("--size", type=_size_arg, default=(64, 64),
                   help="image size HxW")
    p.add_argument("--seed", type=int, default=0, help="generation seed")
    p.set_defaults(func=cmd_make_microdataset)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    configure_workers()
    try:
        return args.func(args)
    except (ConfigError, KeypointSchemaError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as e:
        print(f"error: file not found: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
