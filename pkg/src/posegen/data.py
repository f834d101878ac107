"""SKU-grouped dataset ingestion, training-triple sampling, and paired augmentation.

Dataset layout: root/{train|test}/<sku_id>/<name>.{png|jpg} with a sibling
<name>.keypoints.json per image.  Images are ingested as (3, H, W) float32
in [-1, 1] at a fixed working resolution; keypoints are rescaled to the
same frame so every later geometric op sees one coordinate system.

A training triple couples a target (image, pose) with the remaining SKU
images as appearance sources, plus a foreign pose and a foreign real
(image, pose) pair drawn from a different SKU for adversarial training.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from . import posemap
from .posemap import (
    Crop,
    HFlip,
    KeypointSchemaError,
    KeypointSet,
    PoseMap,
    Rotate,
    rasterize_pose,
    transform_keypoints,
)

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class DatasetError(RuntimeError):
    """The dataset root is unusable (missing, empty, or malformed)."""


@dataclass
class DataItem:
    image: np.ndarray        # (3, H, W) float32 in [-1, 1]
    keypoints: KeypointSet   # frame_size equals the image size
    source_path: str


@dataclass
class SkuGroup:
    """All ingested photos of one fashion item, ordered by source path."""

    sku_id: str
    items: list[DataItem]


@dataclass
class RasterConfig:
    """How keypoints become pose maps during sampling."""

    line_width: int | None = None    # None: 4 at 256 rows, scaled
    vis_threshold: float = posemap.DEFAULT_VIS_THRESHOLD


@dataclass
class AugmentParams:
    """Random crop / horizontal flip / rotation, applied jointly to image and joints."""

    crop_fraction: float = 0.9
    hflip_prob: float = 0.5
    max_rotate: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ValueError(f"crop_fraction must be in (0, 1], got {self.crop_fraction}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError(f"hflip_prob must be in [0, 1], got {self.hflip_prob}")
        if self.max_rotate < 0.0:
            raise ValueError(f"max_rotate must be >= 0, got {self.max_rotate}")
        if self.seed < 0:
            raise ValueError(f"seed must be unsigned, got {self.seed}")


@dataclass
class TrainingTriple:
    """One optimization step's worth of data for a single SKU.

    foreign_pose and foreign_pair come from a different SKU; foreign_pair is
    the genuine (image, pose) couple that anchors the pair discriminator.
    """

    sources: list[np.ndarray]
    source_poses: list[PoseMap]
    target_pose: PoseMap
    target_image: np.ndarray
    foreign_pose: PoseMap
    foreign_pair: tuple[np.ndarray, PoseMap]
    sku_id: str = ""
    foreign_sku_id: str = ""
    target_path: str = ""
    source_paths: list[str] = field(default_factory=list)


def load_image(path, image_size: tuple[int, int]) -> np.ndarray:
    """Decode, resize to (H, W), and rescale to [-1, 1] as (3, H, W) float32."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    h, w = image_size
    if arr.shape[:2] != (h, w):
        arr = cv2.resize(arr, (w, h), interpolation=cv2.INTER_AREA)
    return (arr.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def _rescale_keypoints(kps: KeypointSet, new_size: tuple[int, int]) -> KeypointSet:
    """Map joints onto a resized pixel grid with the center-aligned
    convention used by image resizing, keeping them registered with the
    resized image and with rasterize_pose's projection."""
    nh, nw = new_size
    fh, fw = kps.frame_size
    pts = kps.points.copy()
    pts[:, 0] = (pts[:, 0] + 0.5) * (nw / fw) - 0.5
    pts[:, 1] = (pts[:, 1] + 0.5) * (nh / fh) - 0.5
    return KeypointSet(points=pts, frame_size=(nh, nw))


def read_manifest(root) -> dict | None:
    p = Path(root) / "dataset.meta.json"
    if p.is_file():
        return json.loads(p.read_text())
    return None


def scan_dataset(root, mode: str, image_size: tuple[int, int] | None = None) -> list[SkuGroup]:
    """Ingest root/<mode> into SkuGroups, deterministically ordered by sku_id.

    Items missing a readable keypoint file are skipped with a warning; an
    empty result is fatal.  image_size defaults to the manifest's working
    resolution when a dataset.meta.json is present.
    """
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    base = Path(root) / mode
    if not base.is_dir():
        raise DatasetError(f"dataset directory not found: {base}")
    if image_size is None:
        manifest = read_manifest(root)
        if manifest and "image_size" in manifest:
            image_size = tuple(manifest["image_size"])
        else:
            raise DatasetError(
                f"no image_size given and no dataset.meta.json manifest under {root}")

    groups = []
    for sku_dir in sorted(p for p in base.iterdir() if p.is_dir()):
        items = []
        images = sorted(p for p in sku_dir.iterdir()
                        if p.suffix.lower() in IMAGE_EXTENSIONS)
        for img_path in images:
            kp_path = img_path.with_name(img_path.stem + ".keypoints.json")
            if not kp_path.is_file():
                log.warning("skipping %s: missing keypoint file %s", img_path, kp_path.name)
                continue
            try:
                kps = posemap.load_keypoints(kp_path)
            except KeypointSchemaError as e:
                log.warning("skipping %s: %s", img_path, e)
                continue
            image = load_image(img_path, image_size)
            items.append(DataItem(
                image=image,
                keypoints=_rescale_keypoints(kps, image_size),
                source_path=str(img_path),
            ))
        if items:
            groups.append(SkuGroup(sku_id=sku_dir.name, items=items))
    if not groups:
        raise DatasetError(f"no usable SKU groups under {base}")
    return groups


def augment_pair(image: np.ndarray, kps: KeypointSet, params: AugmentParams,
                 rng: np.random.Generator | None = None) -> tuple[np.ndarray, KeypointSet]:
    """Apply one random crop -> resize-back -> flip -> rotate chain to both inputs.

    The joint transform acts on coordinates, never on rendered pose maps, so
    limb colors stay semantically correct after flips.
    """
    h, w = image.shape[1], image.shape[2]
    if kps.frame_size != (h, w):
        raise ValueError(f"image {h}x{w} and keypoint frame {kps.frame_size} disagree")
    if rng is None:
        rng = np.random.default_rng(params.seed)

    if params.crop_fraction < 1.0:
        ch = max(1, round(h * params.crop_fraction))
        cw = max(1, round(w * params.crop_fraction))
        top = int(rng.integers(0, h - ch + 1))
        left = int(rng.integers(0, w - cw + 1))
        kps = transform_keypoints(kps, Crop(top=top, left=left, height=ch, width=cw))
        cropped = image[:, top:top + ch, left:left + cw].transpose(1, 2, 0)
        image = cv2.resize(cropped, (w, h), interpolation=cv2.INTER_LINEAR).transpose(2, 0, 1)
        kps = _rescale_keypoints(kps, (h, w))

    if rng.random() < params.hflip_prob:
        image = image[:, :, ::-1].copy()
        kps = transform_keypoints(kps, HFlip())

    theta = float(rng.uniform(-params.max_rotate, params.max_rotate))
    if theta != 0.0:
        m = posemap.rotation_matrix(theta, ((w - 1) / 2.0, (h - 1) / 2.0))
        warped = cv2.warpAffine(
            image.transpose(1, 2, 0), m, (w, h),
            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
            borderValue=(-1.0, -1.0, -1.0),
        )
        image = warped.transpose(2, 0, 1)
        kps = transform_keypoints(kps, Rotate(theta))

    return np.ascontiguousarray(image, dtype=np.float32), kps


def _prepared(item: DataItem, raster_cfg: RasterConfig,
              augment: AugmentParams | None, rng: np.random.Generator):
    image, kps = item.image, item.keypoints
    if augment is not None:
        image, kps = augment_pair(image, kps, augment, rng)
    h, w = image.shape[1], image.shape[2]
    pose = rasterize_pose(kps, (h, w), line_width=raster_cfg.line_width,
                          vis_threshold=raster_cfg.vis_threshold)
    return image, pose


def sample_triple(groups: list[SkuGroup], group_index: int, rng: np.random.Generator,
                  raster_cfg: RasterConfig | None = None, mode: str = "multi",
                  include_target_in_sources: bool = False,
                  augment: AugmentParams | None = None) -> TrainingTriple:
    """Draw one TrainingTriple from the indexed SKU, reproducibly under rng.

    The target item is uniform within the group; sources are the remaining
    group items (multi mode) or one uniformly drawn other item (single
    mode); a single-item group falls back to self-reconstruction.  The
    foreign (image, pose) pair is one uniform item of one uniform *other*
    group.
    """
    if len(groups) < 2:
        raise ValueError("need at least 2 SKU groups to draw a foreign pose pair")
    group = groups[group_index]
    if not group.items:
        raise ValueError(f"group {group.sku_id!r} has no items")
    if raster_cfg is None:
        raster_cfg = RasterConfig()

    n = len(group.items)
    t_idx = int(rng.integers(0, n))
    others = [i for i in range(n) if i != t_idx]
    if include_target_in_sources:
        src_idx = list(range(n))
    elif not others:
        src_idx = [t_idx]          # self-reconstruction fallback
    elif mode == "multi":
        src_idx = others
    else:
        src_idx = [others[int(rng.integers(0, len(others)))]]

    f_group = groups[(group_index + 1 + int(rng.integers(0, len(groups) - 1))) % len(groups)]
    f_idx = int(rng.integers(0, len(f_group.items)))

    target_image, target_pose = _prepared(group.items[t_idx], raster_cfg, augment, rng)
    sources, source_poses = [], []
    for i in src_idx:
        img, pose = _prepared(group.items[i], raster_cfg, augment, rng)
        sources.append(img)
        source_poses.append(pose)
    foreign_image, foreign_pose = _prepared(f_group.items[f_idx], raster_cfg, augment, rng)

    return TrainingTriple(
        sources=sources,
        source_poses=source_poses,
        target_pose=target_pose,
        target_image=target_image,
        foreign_pose=foreign_pose,
        foreign_pair=(foreign_image, foreign_pose),
        sku_id=group.sku_id,
        foreign_sku_id=f_group.sku_id,
        target_path=group.items[t_idx].source_path,
        source_paths=[group.items[i].source_path for i in src_idx],
    )
