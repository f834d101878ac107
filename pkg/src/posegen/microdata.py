"""Synthetic micro-dataset generator: colored garments on articulated stick figures.

Each SKU is a distinct garment color scheme; each item is the same figure in
a freshly sampled pose.  Keypoint files are exact by construction because
the renderer draws *from* the saved joints.  Small enough to learn pose
transfer in minutes on a CPU, which is what the test suite needs.
"""

from __future__ import annotations

import colorsys
import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from . import posemap
from .posemap import NUM_KEYPOINTS, KeypointSet

BACKGROUND_RGB = (235, 235, 235)


@dataclass
class MicrodataConfig:
    num_skus: int = 2
    items_per_sku: int = 3
    image_size: tuple[int, int] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if self.num_skus < 2:
            raise ValueError(f"num_skus must be >= 2, got {self.num_skus}")
        if not 2 <= self.items_per_sku <= 5:
            raise ValueError(f"items_per_sku must be in [2, 5], got {self.items_per_sku}")
        h, w = self.image_size
        if h < 16 or w < 16:
            raise ValueError(f"image_size must be at least 16x16, got {self.image_size}")
        if self.seed < 0:
            raise ValueError(f"seed must be unsigned, got {self.seed}")


def _hsv255(h: float, s: float, v: float) -> tuple[int, int, int]:
    r, g, b = colorsys.hsv_to_rgb(h % 1.0, s, v)
    return int(round(r * 255)), int(round(g * 255)), int(round(b * 255))


def sku_palette(rng: np.random.Generator) -> dict[str, tuple[int, int, int]]:
    """Draw one garment color scheme: shirt, chest stripe, pants, skin."""
    hue = float(rng.uniform(0.0, 1.0))
    skin_jit = float(rng.uniform(-0.04, 0.04))
    return {
        "shirt": _hsv255(hue, 0.85, 0.85),
        "stripe": _hsv255(hue + 0.38, 0.9, 0.95),
        "pants": _hsv255(hue + 0.62, 0.6, 0.45),
        "skin": _hsv255(0.08 + skin_jit, 0.45, 0.85),
    }


def sample_skeleton(rng: np.random.Generator, image_size: tuple[int, int]) -> KeypointSet:
    """Forward-kinematics pose sampler; returns all 18 joints fully visible.

    Angles are measured in image coordinates (x right, y down); a torso tilt
    plus independent arm and leg swings give visibly distinct poses while
    keeping the figure inside the frame.
    """
    h, w = image_size

    def polar(length, deg):
        rad = np.deg2rad(deg)
        return np.array([length * np.sin(rad), length * np.cos(rad)])

    hip_c = np.array([
        w * (0.5 + rng.uniform(-0.06, 0.06)),
        h * (0.52 + rng.uniform(-0.03, 0.03)),
    ])
    tilt = float(rng.uniform(-8.0, 8.0))
    spine_dir = np.array([np.sin(np.deg2rad(tilt)), -np.cos(np.deg2rad(tilt))])
    neck = hip_c + h * 0.25 * float(rng.uniform(0.95, 1.05)) * spine_dir
    nose = neck + h * 0.09 * np.array([
        np.sin(np.deg2rad(tilt + rng.uniform(-8.0, 8.0))),
        -np.cos(np.deg2rad(tilt + rng.uniform(-8.0, 8.0))),
    ])

    perp = np.array([np.cos(np.deg2rad(tilt)), np.sin(np.deg2rad(tilt))])
    sw = w * 0.095 * float(rng.uniform(0.9, 1.1))
    r_sho, l_sho = neck - sw * perp, neck + sw * perp
    hw = w * 0.065 * float(rng.uniform(0.9, 1.1))
    r_hip, l_hip = hip_c - hw * perp, hip_c + hw * perp

    def arm(shoulder, outward_sign):
        swing = float(rng.uniform(-10.0, 65.0))        # from straight down, + = outward
        elbow = shoulder + polar(h * 0.11 * rng.uniform(0.9, 1.1), outward_sign * swing)
        fore = swing + float(rng.uniform(-55.0, 55.0))
        wrist = elbow + polar(h * 0.10 * rng.uniform(0.9, 1.1), outward_sign * fore)
        return elbow, wrist

    r_elb, r_wri = arm(r_sho, -1.0)
    l_elb, l_wri = arm(l_sho, +1.0)

    def leg(hip):
        swing = float(rng.uniform(-18.0, 18.0))
        knee = hip + polar(h * 0.16 * rng.uniform(0.95, 1.05), swing)
        ankle = knee + polar(h * 0.16 * rng.uniform(0.95, 1.05),
                             swing + float(rng.uniform(-12.0, 12.0)))
        return knee, ankle

    r_kne, r_ank = leg(r_hip)
    l_kne, l_ank = leg(l_hip)

    eye_dx, eye_dy = w * 0.031, h * 0.023
    ear_dx = w * 0.062
    r_eye = nose + np.array([-eye_dx, -eye_dy])
    l_eye = nose + np.array([eye_dx, -eye_dy])
    r_ear = nose + np.array([-ear_dx, 0.0])
    l_ear = nose + np.array([ear_dx, 0.0])

    joints = [nose, neck, r_sho, r_elb, r_wri, l_sho, l_elb, l_wri,
              r_hip, r_kne, r_ank, l_hip, l_kne, l_ank,
              r_eye, l_eye, r_ear, l_ear]
    pts = np.ones((NUM_KEYPOINTS, 3), dtype=np.float64)
    for i, j in enumerate(joints):
        pts[i, 0] = min(max(float(j[0]), 1.0), w - 2.0)
        pts[i, 1] = min(max(float(j[1]), 1.0), h - 2.0)
    return KeypointSet(points=pts, frame_size=(h, w))


def render_figure(kps: KeypointSet, palette: dict[str, tuple[int, int, int]]) -> np.ndarray:
    """Paint the garment-wearing figure implied by the joints; uint8 (H, W, 3)."""
    h, w = kps.frame_size
    canvas = np.full((h, w, 3), BACKGROUND_RGB, dtype=np.uint8)
    p = kps.points

    def pt(i):
        return int(round(p[i, 0])), int(round(p[i, 1]))

    t_limb = max(2, round(0.035 * h))
    t_arm = max(2, round(0.03 * h))

    for a, b in ((8, 9), (9, 10), (11, 12), (12, 13)):
        cv2.line(canvas, pt(a), pt(b), palette["pants"], t_limb)

    spread = 0.022 * w
    perp = p[5, :2] - p[2, :2]
    norm = float(np.hypot(*perp)) or 1.0
    perp = perp / norm * spread
    quad = np.array([
        p[2, :2] - perp, p[5, :2] + perp,
        p[11, :2] + perp, p[8, :2] - perp,
    ])
    cv2.fillConvexPoly(canvas, np.round(quad).astype(np.int32), palette["shirt"])

    chest_l = (0.6 * p[5, :2] + 0.4 * p[11, :2])
    chest_r = (0.6 * p[2, :2] + 0.4 * p[8, :2])
    cv2.line(canvas, tuple(np.round(chest_r).astype(int)),
             tuple(np.round(chest_l).astype(int)), palette["stripe"],
             max(2, round(0.045 * h)))

    for sho, elb, wri in ((2, 3, 4), (5, 6, 7)):
        cv2.line(canvas, pt(sho), pt(elb), palette["shirt"], t_arm)
        cv2.line(canvas, pt(elb), pt(wri), palette["skin"], max(1, t_arm - 1))

    head_r = max(2, round(0.055 * h))
    cv2.circle(canvas, pt(0), head_r, palette["skin"], -1)
    eye_r = max(1, round(0.012 * h))
    cv2.circle(canvas, pt(14), eye_r, (40, 30, 30), -1)
    cv2.circle(canvas, pt(15), eye_r, (40, 30, 30), -1)
    return canvas


def make_microdataset(out_dir, cfg: MicrodataConfig) -> dict:
    """Write the dataset under out_dir/train and return a summary dict.

    Byte-identical across runs with the same config, so golden tests can
    regenerate instead of shipping fixtures.
    """
    rng = np.random.default_rng(cfg.seed)
    root = Path(out_dir)
    train = root / "train"
    train.mkdir(parents=True, exist_ok=True)

    num_images = 0
    for s in range(cfg.num_skus):
        sku_dir = train / f"sku_{s:03d}"
        sku_dir.mkdir(exist_ok=True)
        palette = sku_palette(rng)
        for i in range(cfg.items_per_sku):
            kps = sample_skeleton(rng, cfg.image_size)
            canvas = render_figure(kps, palette)
            Image.fromarray(canvas).save(sku_dir / f"view_{i:02d}.png")
            posemap.save_keypoints(kps, sku_dir / f"view_{i:02d}.keypoints.json")
            num_images += 1

    manifest = {
        "version": 1,
        "image_size": list(cfg.image_size),
        "num_skus": cfg.num_skus,
        "items_per_sku": cfg.items_per_sku,
        "num_images": num_images,
        "seed": cfg.seed,
    }
    (root / "dataset.meta.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest
