"""Generator G = Decoder(E_I(x), E_P(p)).

E_I turns a variable-length set of same-SKU photos into one appearance code
via a shared conv stem, residual blocks, and a bidirectional convolutional
LSTM over the image sequence.  E_P is a small U-Net encoder over the pose
map whose skips feed the decoder, so spatial pose structure reaches the
output at full resolution while appearance arrives through the bottleneck.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

DOWNSAMPLE_FACTOR = 4


@dataclass
class GeneratorConfig:
    base_channels: int = 64
    n_res_blocks: int = 6
    lstm_hidden_channels: int = 256
    image_size: tuple[int, int] = (256, 256)
    mode: str = "multi"
    downsample_factor: int = DOWNSAMPLE_FACTOR

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.n_res_blocks < 1:
            raise ValueError(f"n_res_blocks must be >= 1, got {self.n_res_blocks}")
        if self.lstm_hidden_channels < 1:
            raise ValueError(
                f"lstm_hidden_channels must be > 0, got {self.lstm_hidden_channels}")
        if self.downsample_factor != DOWNSAMPLE_FACTOR:
            raise ValueError(f"downsample_factor is fixed at {DOWNSAMPLE_FACTOR}")
        h, w = self.image_size
        if h % 4 or w % 4:
            raise ValueError(f"image_size must be divisible by 4, got {self.image_size}")
        if self.mode not in ("single", "multi"):
            raise ValueError(f"mode must be 'single' or 'multi', got {self.mode!r}")


@dataclass
class VisualCode:
    """Appearance summary C_I at 1/4 resolution."""

    tensor: torch.Tensor   # (1, lstm_hidden_channels, H/4, W/4)


@dataclass
class PoseCode:
    """Pose bottleneck C_P plus the two encoder skips, shallow to deep."""

    bottleneck: torch.Tensor          # (1, 4*base, H/4, W/4)
    skips: list[torch.Tensor]         # [(1, base, H, W), (1, 2*base, H/2, W/2)]


class ResidualBlock(nn.Module):
    """Two 3x3 convs with instance norm and an additive skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class ConvLSTMCell(nn.Module):
    """Peephole-free ConvLSTM with 3x3 kernels for both input and state."""

    def __init__(self, in_channels: int, hidden_channels: int):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.conv_x = nn.Conv2d(in_channels, 4 * hidden_channels, 3, padding=1)
        self.conv_h = nn.Conv2d(hidden_channels, 4 * hidden_channels, 3,
                                padding=1, bias=False)

    def forward(self, x, state):
        h, c = state
        gates = self.conv_x(x) + self.conv_h(h)
        i, f, g, o = gates.chunk(4, dim=1)
        c_next = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_next = torch.sigmoid(o) * torch.tanh(c_next)
        return h_next, c_next

    def initial_state(self, reference: torch.Tensor):
        shape = (reference.shape[0], self.hidden_channels, *reference.shape[2:])
        zeros = reference.new_zeros(shape)
        return zeros, zeros.clone()


class ImageEncoder(nn.Module):
    """Shared stem + residual blocks per image, bC-LSTM fusion across images."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        b = cfg.base_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, b, 7, padding=3),
            nn.InstanceNorm2d(b),
            nn.ReLU(inplace=True),
            nn.Conv2d(b, 2 * b, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * b),
            nn.ReLU(inplace=True),
            nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * b),
            nn.ReLU(inplace=True),
        )
        self.res = nn.Sequential(*[ResidualBlock(4 * b) for _ in range(cfg.n_res_blocks)])
        self.fwd_cell = ConvLSTMCell(4 * b, cfg.lstm_hidden_channels)
        self.bwd_cell = ConvLSTMCell(4 * b, cfg.lstm_hidden_channels)
        self.merge = nn.Conv2d(2 * cfg.lstm_hidden_channels, cfg.lstm_hidden_channels, 1)

    def forward(self, xs: torch.Tensor) -> torch.Tensor:
        feats = self.res(self.stem(xs))          # (N, 4b, H/4, W/4)
        steps = [feats[t:t + 1] for t in range(feats.shape[0])]
        state = self.fwd_cell.initial_state(steps[0])
        for x in steps:
            state = self.fwd_cell(x, state)
        h_fwd = state[0]
        state = self.bwd_cell.initial_state(steps[0])
        for x in reversed(steps):
            state = self.bwd_cell(x, state)
        h_bwd = state[0]
        return self.merge(torch.cat([h_fwd, h_bwd], dim=1))


class PoseEncoder(nn.Module):
    """Two conv->ReLU->conv->ReLU down blocks with skips, then a bottleneck block."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        b = cfg.base_channels

        def block(cin, cout):
            return nn.Sequential(
                nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True),
                nn.Conv2d(cout, cout, 3, padding=1), nn.ReLU(inplace=True),
            )

        self.down1 = block(3, b)
        self.down2 = block(b, 2 * b)
        self.bottom = block(2 * b, 4 * b)
        self.pool = nn.MaxPool2d(2)

    def forward(self, p: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        s1 = self.down1(p)
        s2 = self.down2(self.pool(s1))
        bottleneck = self.bottom(self.pool(s2))
        return bottleneck, [s1, s2]


class Decoder(nn.Module):
    """Merge C_I with C_P, upsample twice through the pose skips, emit tanh image."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        b = cfg.base_channels
        self.fuse = nn.Sequential(
            nn.Conv2d(cfg.lstm_hidden_channels + 4 * b, 4 * b, 3, padding=1),
            nn.ReLU(inplace=True),
        )
        self.up1 = nn.ConvTranspose2d(4 * b, 2 * b, 2, stride=2)
        self.conv1 = nn.Sequential(nn.Conv2d(4 * b, 2 * b, 3, padding=1),
                                   nn.ReLU(inplace=True))
        self.up2 = nn.ConvTranspose2d(2 * b, b, 2, stride=2)
        self.conv2 = nn.Sequential(nn.Conv2d(2 * b, b, 3, padding=1),
                                   nn.ReLU(inplace=True))
        self.head = nn.Conv2d(b, 3, 7, padding=3)

    def forward(self, ci: torch.Tensor, bottleneck: torch.Tensor,
                skips: list[torch.Tensor]) -> torch.Tensor:
        x = self.fuse(torch.cat([ci, bottleneck], dim=1))
        x = self.conv1(torch.cat([self.up1(x), skips[1]], dim=1))
        x = self.conv2(torch.cat([self.up2(x), skips[0]], dim=1))
        return torch.tanh(self.head(x))


def init_weights(module: nn.Module):
    """normal(0, 0.02) convs, orthogonal LSTM state kernels, zero biases."""
    for m in module.modules():
        if isinstance(m, ConvLSTMCell):
            nn.init.normal_(m.conv_x.weight, 0.0, 0.02)
            nn.init.orthogonal_(m.conv_h.weight)
            nn.init.zeros_(m.conv_x.bias)
        elif isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            nn.init.normal_(m.weight, 0.0, 0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def _as_batched(t: torch.Tensor, what: str) -> torch.Tensor:
    if t.dim() == 3:
        t = t.unsqueeze(0)
    if t.dim() != 4 or t.shape[1] != 3:
        raise ValueError(f"{what} must be (3, H, W) or (1, 3, H, W), got {tuple(t.shape)}")
    if t.shape[2] % 4 or t.shape[3] % 4:
        raise ValueError(f"{what} spatial size must be divisible by 4, got {tuple(t.shape)}")
    return t


class Generator(nn.Module):
    """Full G; submodules ei / ep / dec match the checkpoint name prefixes."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        self.ei = ImageEncoder(cfg)
        self.ep = PoseEncoder(cfg)
        self.dec = Decoder(cfg)
        init_weights(self)

    def encode_images(self, xs: list[torch.Tensor]) -> VisualCode:
        if len(xs) == 0:
            raise ValueError("encode_images needs at least one image")
        if self.cfg.mode == "single" and len(xs) != 1:
            raise ValueError(f"single mode takes exactly 1 source image, got {len(xs)}")
        if len(xs) > 5:
            raise ValueError(f"at most 5 source images supported, got {len(xs)}")
        batched = [_as_batched(x, "source image") for x in xs]
        sizes = {tuple(b.shape[2:]) for b in batched}
        if len(sizes) != 1:
            raise ValueError(f"mixed source image sizes: {sorted(sizes)}")
        return VisualCode(tensor=self.ei(torch.cat(batched, dim=0)))

    def encode_pose(self, p: torch.Tensor) -> PoseCode:
        p = _as_batched(p, "pose map")
        bottleneck, skips = self.ep(p)
        return PoseCode(bottleneck=bottleneck, skips=skips)

    def decode(self, ci: VisualCode, cp: PoseCode) -> torch.Tensor:
        if ci.tensor.shape[2:] != cp.bottleneck.shape[2:]:
            raise ValueError(
                f"visual code {tuple(ci.tensor.shape[2:])} and pose bottleneck "
                f"{tuple(cp.bottleneck.shape[2:])} spatial sizes differ")
        return self.dec(ci.tensor, cp.bottleneck, cp.skips)

    def generate(self, xs: list[torch.Tensor], p: torch.Tensor) -> torch.Tensor:
        return self.decode(self.encode_images(xs), self.encode_pose(p))

    def forward(self, xs: list[torch.Tensor], p: torch.Tensor) -> torch.Tensor:
        return self.generate(xs, p)
