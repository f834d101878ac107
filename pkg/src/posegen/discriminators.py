"""PatchGAN discriminators.

One architecture, two roles: D_I consumes a 3-channel image and scores
realism; D_P consumes the 6-channel concat of image and pose map and scores
whether they belong together.  Scores stay raw (pre-sigmoid); the loss
module applies the numerically stable sigmoid + cross-entropy in one step.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .generator import init_weights

KERNEL = 4
PAD = 1


@dataclass
class DiscConfig:
    base_channels: int = 64
    n_layers: int = 3          # stride-2 layers; 3 gives a 70x70 receptive field
    in_channels: int = 3       # 3 for the image critic, 6 for the pair critic

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")


@dataclass
class PatchScores:
    map: torch.Tensor     # (1, 1, h', w') raw scores
    mean: torch.Tensor    # scalar, arithmetic mean of map


def _layer_plan(n_layers: int) -> list[tuple[int, int]]:
    """(kernel, stride) per conv, first to last."""
    return [(KERNEL, 2)] * n_layers + [(KERNEL, 1), (KERNEL, 1)]


def conv_output_len(d: int, kernel: int, stride: int, pad: int = PAD) -> int:
    return (d + 2 * pad - kernel) // stride + 1


def patch_grid_shape(size: tuple[int, int], n_layers: int = 3) -> tuple[int, int]:
    """Closed-form patch map size for an (H, W) input."""
    h, w = size
    for k, s in _layer_plan(n_layers):
        h = conv_output_len(h, k, s)
        w = conv_output_len(w, k, s)
    return h, w


def receptive_field(n_layers: int = 3) -> int:
    """Input pixels seen by one output score (70 for the 3-layer stack)."""
    rf = 1
    for k, s in reversed(_layer_plan(n_layers)):
        rf = rf * s + (k - s)
    return rf


def min_input_size(n_layers: int = 3) -> int:
    """Smallest square input that still yields a 1x1 patch map."""
    d = 1
    for k, s in reversed(_layer_plan(n_layers)):
        # smallest d_in with conv_output_len(d_in) >= d
        d = s * (d - 1) + k - 2 * PAD
    return d


class PatchGAN(nn.Module):
    """4x4 conv stack: n_layers stride-2 (channels doubling from base), then
    stride-1 to 8*base, then stride-1 to a 1-channel score map.  LeakyReLU 0.2
    throughout; instance norm on every layer except the first and last."""

    def __init__(self, cfg: DiscConfig):
        super().__init__()
        self.cfg = cfg
        layers = [nn.Conv2d(cfg.in_channels, cfg.base_channels, KERNEL, 2, PAD),
                  nn.LeakyReLU(0.2, inplace=True)]
        ch = cfg.base_channels
        for i in range(1, cfg.n_layers):
            out = cfg.base_channels * min(2 ** i, 8)
            layers += [nn.Conv2d(ch, out, KERNEL, 2, PAD),
                       nn.InstanceNorm2d(out),
                       nn.LeakyReLU(0.2, inplace=True)]
            ch = out
        out = cfg.base_channels * min(2 ** cfg.n_layers, 8)
        layers += [nn.Conv2d(ch, out, KERNEL, 1, PAD),
                   nn.InstanceNorm2d(out),
                   nn.LeakyReLU(0.2, inplace=True),
                   nn.Conv2d(out, 1, KERNEL, 1, PAD)]
        self.net = nn.Sequential(*layers)
        init_weights(self)

    def forward(self, x: torch.Tensor) -> PatchScores:
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.dim() != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(
                f"expected ({self.cfg.in_channels}, H, W) input, got {tuple(x.shape)}")
        lo = min_input_size(self.cfg.n_layers)
        if x.shape[2] < lo or x.shape[3] < lo:
            raise ValueError(
                f"input {tuple(x.shape[2:])} too small for a non-empty patch map; "
                f"need at least {lo}x{lo}")
        score_map = self.net(x)
        return PatchScores(map=score_map, mean=score_map.mean())


def d_image(disc: PatchGAN, y: torch.Tensor) -> PatchScores:
    """Realism scores for an image; disc must be 3-channel."""
    if disc.cfg.in_channels != 3:
        raise ValueError(f"image critic needs in_channels 3, got {disc.cfg.in_channels}")
    return disc(y)


def d_pair(disc: PatchGAN, y: torch.Tensor, p: torch.Tensor) -> PatchScores:
    """Consistency scores for an (image, pose map) pair; disc must be 6-channel."""
    if disc.cfg.in_channels != 6:
        raise ValueError(f"pair critic needs in_channels 6, got {disc.cfg.in_channels}")
    if y.dim() == 3:
        y = y.unsqueeze(0)
    if p.dim() == 3:
        p = p.unsqueeze(0)
    if y.shape[2:] != p.shape[2:]:
        raise ValueError(
            f"image {tuple(y.shape[2:])} and pose map {tuple(p.shape[2:])} sizes differ")
    return disc(torch.cat([y, p], dim=1))
