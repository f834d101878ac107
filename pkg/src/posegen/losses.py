"""Reconstruction, perceptual, and adversarial losses for the pose GAN.

All adversarial terms use sigmoid-inside-BCE on raw patch scores.  The
generator side defaults to the non-saturating -log D(fake) form; a flag
restores the literal log(1 - D(fake)) minimization for comparison runs.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import torch
import torch.nn as nn
import torch.nn.functional as F

from .discriminators import PatchScores

log = logging.getLogger(__name__)

_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)

VGG19_PLAN = ((2, 64), (2, 128), (2, 256), (2, 512))
VGG19_STAGE_NAMES = ("relu1_2", "relu2_2", "relu3_2", "relu4_2")


@runtime_checkable
class PerceptualExtractor(Protocol):
    """Fixed feature pyramid Phi with one non-negative weight per stage."""

    layer_names: tuple[str, ...]
    weights: tuple[float, ...]

    def features(self, image: torch.Tensor) -> list[torch.Tensor]: ...


class IdentityExtractor:
    """Single stage returning the image itself; the smallest valid Phi."""

    layer_names = ("identity",)
    weights = (1.0,)

    def features(self, image: torch.Tensor) -> list[torch.Tensor]:
        return [image]


class ConvFeatureExtractor(nn.Module):
    """Stacked conv stages (2x2 pooling between them) evaluated as a frozen
    feature pyramid.  The default plan mirrors the first four relu*_2 stages
    of a 19-layer ImageNet classifier; weights come from a named-tensor
    archive, with a seeded random fallback for weight-agnostic tests."""

    def __init__(self, plan=VGG19_PLAN, stage_names=VGG19_STAGE_NAMES,
                 stage_weights=None, seed: int = 0):
        super().__init__()
        if len(plan) != len(stage_names):
            raise ValueError("plan and stage_names lengths differ")
        self.layer_names = tuple(stage_names)
        self.weights = tuple(float(w) for w in (stage_weights or [1.0] * len(plan)))
        if len(self.weights) != len(plan):
            raise ValueError("one weight per stage required")
        if any(w < 0 for w in self.weights):
            raise ValueError("stage weights must be non-negative")

        torch.manual_seed(seed)
        stages = []
        cin = 3
        for n_convs, ch in plan:
            convs = []
            for _ in range(n_convs):
                convs += [nn.Conv2d(cin, ch, 3, padding=1), nn.ReLU(inplace=True)]
                cin = ch
            stages.append(nn.Sequential(*convs))
        self.stages = nn.ModuleList(stages)
        self.register_buffer("mean", torch.tensor(_IMAGENET_MEAN).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor(_IMAGENET_STD).view(1, 3, 1, 1))
        self.requires_grad_(False)
        self.eval()

    @classmethod
    def vgg19(cls, weights_path=None, stage_weights=None) -> "ConvFeatureExtractor":
        phi = cls(VGG19_PLAN, VGG19_STAGE_NAMES, stage_weights)
        if weights_path is not None:
            state = torch.load(weights_path, map_location="cpu", weights_only=True)
            phi.load_state_dict(state)
        else:
            log.warning("no perceptual weights file given; using seeded random "
                        "features (fine for tests, not comparable to published runs)")
        return phi

    @classmethod
    def toy(cls, seed: int = 0, base: int = 8) -> "ConvFeatureExtractor":
        return cls(((1, base), (1, 2 * base)), ("stage1", "stage2"), seed=seed)

    def features(self, image: torch.Tensor) -> list[torch.Tensor]:
        if image.dim() == 3:
            image = image.unsqueeze(0)
        x = ((image + 1.0) / 2.0 - self.mean) / self.std
        outs = []
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = F.max_pool2d(x, 2)
            x = stage(x)
            outs.append(x)
        return outs


@dataclass
class LossReport:
    l1: torch.Tensor
    perceptual: torch.Tensor
    g_adv_i: torch.Tensor
    g_adv_p: torch.Tensor
    d_i_loss: torch.Tensor
    d_p_loss: torch.Tensor
    total_g: torch.Tensor
    alpha: float
    beta: float

    def as_floats(self) -> dict[str, float]:
        out = {}
        for k in ("l1", "perceptual", "g_adv_i", "g_adv_p",
                  "d_i_loss", "d_p_loss", "total_g"):
            v = getattr(self, k)
            out[k] = float(v.detach()) if torch.is_tensor(v) else float(v)
        return out


def recon_loss(y: torch.Tensor, y_hat: torch.Tensor,
               phi: PerceptualExtractor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean absolute pixel difference plus weighted per-stage feature L1."""
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(y.shape)} vs {tuple(y_hat.shape)}")
    l1 = (y - y_hat).abs().mean()
    feats_y = phi.features(y)
    feats_hat = phi.features(y_hat)
    perceptual = y.new_zeros(())
    for w, fy, fh in zip(phi.weights, feats_y, feats_hat):
        perceptual = perceptual + w * (fy - fh).abs().mean()
    return l1, perceptual


def _bce_real_fake(score_real: PatchScores, score_fake: PatchScores) -> torch.Tensor:
    real = F.binary_cross_entropy_with_logits(
        score_real.map, torch.ones_like(score_real.map))
    fake = F.binary_cross_entropy_with_logits(
        score_fake.map, torch.zeros_like(score_fake.map))
    return real + fake


def d_i_loss(score_real: PatchScores, score_fake: PatchScores) -> torch.Tensor:
    """-mean log sigma(real) - mean log(1 - sigma(fake)), image critic."""
    return _bce_real_fake(score_real, score_fake)


def d_p_loss(score_real_pair: PatchScores, score_fake_pair: PatchScores) -> torch.Tensor:
    """Same form as d_i_loss on (image, pose) pair scores."""
    return _bce_real_fake(score_real_pair, score_fake_pair)


def g_adv_losses(score_fake_i: PatchScores, score_fake_pair: PatchScores,
                 saturating: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
    """Generator-side terms.  Non-saturating default: -mean log sigma(fake).
    saturating=True minimizes mean log(1 - sigma(fake)) literally, which can
    go negative and stalls when the critic is confident."""

    def one(scores: PatchScores) -> torch.Tensor:
        if saturating:
            return -F.binary_cross_entropy_with_logits(
                scores.map, torch.zeros_like(scores.map))
        return F.binary_cross_entropy_with_logits(
            scores.map, torch.ones_like(scores.map))

    return one(score_fake_i), one(score_fake_pair)


def total_objective(l1, perceptual, g_adv_i, g_adv_p, d_i, d_p,
                    alpha: float = 1.0, beta: float = 1.0) -> LossReport:
    """Assemble the weighted generator objective and the report around it."""
    if alpha < 0 or beta < 0:
        raise ValueError(f"adversarial weights must be >= 0, got alpha={alpha} beta={beta}")
    total_g = l1 + perceptual + alpha * g_adv_i + beta * g_adv_p
    return LossReport(l1=l1, perceptual=perceptual, g_adv_i=g_adv_i,
                      g_adv_p=g_adv_p, d_i_loss=d_i, d_p_loss=d_p,
                      total_g=total_g, alpha=alpha, beta=beta)
