"""SSIM and Inception Score evaluation with a pluggable classifier.

SSIM follows the standard single-scale formulation: 11x11 Gaussian window
with sigma 1.5, K1=0.01, K2=0.03, dynamic range 1 on [0,1] images,
valid-window convolution, per-channel maps averaged.  IS is
exp(mean KL(p(class|x) || split marginal)) per split, reported as mean and
population std over splits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np
from PIL import Image
from scipy.signal import correlate2d

log = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass
class MetricsReport:
    ssim_mean: float
    ssim_per_image: list[float] = field(default_factory=list)
    is_mean: float = 1.0
    is_std: float = 0.0
    n_images: int = 0
    n_splits: int = 1

    def as_dict(self) -> dict:
        return {
            "ssim_mean": self.ssim_mean,
            "ssim_per_image": list(self.ssim_per_image),
            "is_mean": self.is_mean,
            "is_std": self.is_std,
            "n_images": self.n_images,
            "n_splits": self.n_splits,
        }


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _to_unit_chw(img: np.ndarray, what: str) -> np.ndarray:
    """Coerce to float64 (C, H, W) in [0, 1].  uint8 divides by 255; floats
    with negative entries are treated as [-1, 1] and remapped; other floats
    pass through unchanged."""
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    elif arr.ndim == 3 and arr.shape[2] == 3 and arr.shape[0] != 3:
        arr = arr.transpose(2, 0, 1)
    elif arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"{what}: expected (H,W), (3,H,W) or (H,W,3), "
                         f"got {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    arr = arr.astype(np.float64)
    if arr.min() < 0.0:
        arr = (arr + 1.0) / 2.0
    return arr


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity between two images of equal shape."""
    ca = _to_unit_chw(a, "first image")
    cb = _to_unit_chw(b, "second image")
    if ca.shape != cb.shape:
        raise ValueError(f"shape mismatch: {ca.shape} vs {cb.shape}")
    h, w = ca.shape[1:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, "
                         f"got {h}x{w}")
    win = gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for ch_a, ch_b in zip(ca, cb):
        mu_a = correlate2d(ch_a, win, mode="valid")
        mu_b = correlate2d(ch_b, win, mode="valid")
        var_a = correlate2d(ch_a * ch_a, win, mode="valid") - mu_a * mu_a
        var_b = correlate2d(ch_b * ch_b, win, mode="valid") - mu_b * mu_b
        cov = correlate2d(ch_a * ch_b, win, mode="valid") - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
        den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


@runtime_checkable
class Classifier(Protocol):
    """K-class probabilistic classifier over single images."""

    num_classes: int

    def probabilities(self, image: np.ndarray) -> np.ndarray: ...


class ToyClassifier:
    """Deterministic stand-in: softmax of a seeded random projection of a
    4x4 average-pooled image.  Useful for plumbing tests; its IS numbers are
    not comparable to ones from a trained classifier."""

    def __init__(self, num_classes: int = 10, seed: int = 0):
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        self.num_classes = num_classes
        rng = np.random.default_rng(seed)
        self._proj = rng.normal(0.0, 1.0, size=(num_classes, 4 * 4 * 3))

    def probabilities(self, image: np.ndarray) -> np.ndarray:
        chw = _to_unit_chw(image, "classifier input")
        if chw.shape[0] == 1:
            chw = np.repeat(chw, 3, axis=0)
        h, w = chw.shape[1:]
        pooled = np.zeros((3, 4, 4))
        ys = np.linspace(0, h, 5, dtype=int)
        xs = np.linspace(0, w, 5, dtype=int)
        for i in range(4):
            for j in range(4):
                pooled[:, i, j] = chw[:, ys[i]:ys[i + 1], xs[j]:xs[j + 1]].mean(axis=(1, 2))
        logits = self._proj @ pooled.ravel()
        logits -= logits.max()
        p = np.exp(logits)
        return p / p.sum()


def save_classifier(classifier: ToyClassifier, path) -> Path:
    """Write a projection-classifier asset (.npz with a (K, 48) 'proj' array)."""
    path = Path(path)
    np.savez(path, proj=classifier._proj)
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def load_classifier(path) -> ToyClassifier:
    """Load a projection-classifier asset saved by save_classifier."""
    with np.load(path) as archive:
        if "proj" not in archive:
            raise ValueError(f"classifier file {path} lacks a 'proj' array")
        proj = np.asarray(archive["proj"], dtype=float)
    if proj.ndim != 2 or proj.shape[0] < 2 or proj.shape[1] != 4 * 4 * 3:
        raise ValueError(f"classifier projection must be (K>=2, 48), "
                         f"got {proj.shape}")
    clf = ToyClassifier(num_classes=proj.shape[0])
    clf._proj = proj
    return clf


def inception_score(images: list, classifier: Classifier,
                    n_splits: int = 10) -> tuple[float, float]:
    """exp(mean KL to the split marginal), averaged over equal splits."""
    if n_splits < 1:
        raise ValueError(f"n_splits must be >= 1, got {n_splits}")
    if len(images) < n_splits:
        raise ValueError(f"need at least n_splits={n_splits} images, "
                         f"got {len(images)}")
    probs = np.stack([np.asarray(classifier.probabilities(im), dtype=np.float64)
                      for im in images])
    for i, row in enumerate(probs):
        if row.min() < 0 or abs(row.sum() - 1.0) > 1e-5:
            raise ValueError(f"classifier output for image {i} is not a "
                             f"probability vector (sum {row.sum():.6f})")
    scores = []
    for chunk in np.array_split(probs, n_splits):
        marginal = chunk.mean(axis=0)
        kl = chunk * (np.log(chunk, where=chunk > 0, out=np.zeros_like(chunk))
                      - np.log(marginal, where=marginal > 0,
                               out=np.zeros_like(marginal)))
        kl[chunk == 0] = 0.0
        scores.append(np.exp(kl.sum(axis=1).mean()))
    return float(np.mean(scores)), float(np.std(scores))


def list_images(folder) -> list[Path]:
    return sorted(p for p in Path(folder).iterdir()
                  if p.suffix.lower() in IMAGE_EXTENSIONS)


def match_image_pairs(gen_dir, target_dir) -> tuple[list[str], list[str], list[str]]:
    """Filenames present in both dirs (sorted), plus each side's leftovers."""
    gen_names = {p.name for p in list_images(gen_dir)}
    tgt_names = {p.name for p in list_images(target_dir)}
    matched = sorted(gen_names & tgt_names)
    return matched, sorted(gen_names - tgt_names), sorted(tgt_names - gen_names)


def _load_unit(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def evaluate_folder(gen_dir, target_dir, classifier: Classifier | None = None,
                    n_splits: int = 10) -> MetricsReport:
    """Pair images by filename, SSIM each pair, IS over the generated set."""
    matched, extra_gen, extra_tgt = match_image_pairs(gen_dir, target_dir)
    for name in extra_gen:
        log.warning("unmatched generated image skipped: %s", name)
    for name in extra_tgt:
        log.warning("unmatched target image skipped: %s", name)
    if not matched:
        raise RuntimeError(f"no filename-matched image pairs between "
                           f"{gen_dir} and {target_dir}")
    if classifier is None:
        log.warning("no classifier supplied; Inception Score uses the toy "
                    "classifier and is not comparable to published numbers")
        classifier = ToyClassifier()

    gen_images = [_load_unit(Path(gen_dir) / name) for name in matched]
    ssim_values = [ssim(g, _load_unit(Path(target_dir) / name))
                   for g, name in zip(gen_images, matched)]
    eff_splits = min(n_splits, len(gen_images))
    if eff_splits < n_splits:
        log.warning("reducing IS splits from %d to %d (only %d images)",
                    n_splits, eff_splits, len(gen_images))
    is_mean, is_std = inception_score(gen_images, classifier, eff_splits)
    return MetricsReport(
        ssim_mean=float(np.mean(ssim_values)),
        ssim_per_image=[float(v) for v in ssim_values],
        is_mean=is_mean,
        is_std=is_std,
        n_images=len(matched),
        n_splits=eff_splits,
    )
