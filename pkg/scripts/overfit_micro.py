#!/usr/bin/env python3
"""Overfit the generator on a synthetic stick-figure micro-dataset.

Builds the dataset, trains reconstruction-only (alpha = beta = 0), then
optionally continues with both critics enabled, and writes a two-row
comparison sheet (targets above, reconstructions below).

Example:
    python3 scripts/overfit_micro.py --out runs/overfit --epochs 1000
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from posegen.data import scan_dataset
from posegen.generator import GeneratorConfig
from posegen.losses import ConvFeatureExtractor
from posegen.microdata import MicrodataConfig, make_microdataset
from posegen.posemap import rasterize_pose
from posegen.trainer import TrainConfig, fit, make_state, restore_state


def to_uint8(chw: np.ndarray) -> np.ndarray:
    return (np.rint((chw + 1.0) / 2.0 * 255.0).clip(0, 255)
            .astype(np.uint8).transpose(1, 2, 0))


def comparison_sheet(groups, gen, size) -> np.ndarray:
    """Targets on the top row, reconstructions under them."""
    tops, bottoms = [], []
    with torch.no_grad():
        for group in groups:
            for i, item in enumerate(group.items):
                others = [it for j, it in enumerate(group.items) if j != i]
                sources = [torch.from_numpy(it.image) for it in others or [item]]
                pose = torch.from_numpy(
                    rasterize_pose(item.keypoints, size).pixels)
                y_hat = gen.generate(sources, pose)[0].numpy()
                tops.append(to_uint8(item.image))
                bottoms.append(to_uint8(y_hat))
    return np.vstack([np.hstack(tops), np.hstack(bottoms)])


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description=__doc__,
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--out", default="runs/overfit", help="output root")
    parser.add_argument("--skus", type=int, default=2)
    parser.add_argument("--items-per-sku", type=int, default=3)
    parser.add_argument("--image-size", type=int, default=64)
    parser.add_argument("--epochs", type=int, default=1000,
                        help="reconstruction-only epochs (2 steps each here)")
    parser.add_argument("--adversarial-epochs", type=int, default=0,
                        help="extra epochs with both critics on (0 = skip)")
    parser.add_argument("--lr", type=float, default=3e-4)
    parser.add_argument("--base-channels", type=int, default=16)
    parser.add_argument("--lstm-channels", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    torch.set_num_threads(1)
    out = Path(args.out)
    size = (args.image_size, args.image_size)

    data_root = out / "data"
    if not (data_root / "dataset.meta.json").exists():
        make_microdataset(data_root, MicrodataConfig(
            num_skus=args.skus, items_per_sku=args.items_per_sku,
            image_size=size, seed=args.seed))
    groups = scan_dataset(data_root, "train", image_size=size)

    cfg = TrainConfig(lr0=args.lr, epochs=args.epochs, decay_every=200,
                      decay_factor=0.8, alpha=0.0, beta=0.0, seed=args.seed,
                      checkpoint_every=args.epochs)
    gen_cfg = GeneratorConfig(base_channels=args.base_channels,
                              n_res_blocks=1,
                              lstm_hidden_channels=args.lstm_channels,
                              image_size=size, mode="multi")
    phi = ConvFeatureExtractor.toy(seed=args.seed)
    state = make_state(cfg, gen_cfg, phi)
    final = fit(groups, state, out / "recon")

    records = [json.loads(line) for line in
               (out / "recon/metrics.jsonl").read_text().splitlines()]
    first, last = records[0]["l1"], records[-1]["l1"]
    print(f"reconstruction: {len(records)} steps, l1 {first:.4f} -> {last:.4f}")

    if args.adversarial_epochs > 0:
        adv_cfg = TrainConfig(lr0=args.lr, epochs=args.epochs
                              + args.adversarial_epochs, decay_every=200,
                              decay_factor=0.8, alpha=1.0, beta=1.0,
                              seed=args.seed,
                              checkpoint_every=args.adversarial_epochs)
        state = restore_state(final, phi, cfg=adv_cfg)
        final = fit(groups, state, out / "adv")
        records = [json.loads(line) for line in
                   (out / "adv/metrics.jsonl").read_text().splitlines()]
        print(f"adversarial: {len(records)} more steps, "
              f"final l1 {records[-1]['l1']:.4f}")

    state.gen.eval()
    sheet = comparison_sheet(groups, state.gen, size)
    sheet_path = out / "comparison.png"
    Image.fromarray(sheet, mode="RGB").save(sheet_path)
    print(f"wrote {sheet_path} (top: targets, bottom: reconstructions)")
    print(f"final checkpoint: {final}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
