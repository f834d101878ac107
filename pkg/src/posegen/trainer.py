"""Alternating GAN training: one D_I + D_P update, then one G update per SKU.

Determinism contract: a fixed seed fixes parameter init, the per-epoch SKU
shuffle, triple sampling, and therefore the whole loss log; checkpoints
carry model tensors, optimizer moments, and both RNG states so a resumed
run continues the exact sequence of the uninterrupted one.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import AugmentParams, RasterConfig, SkuGroup, sample_triple
from .discriminators import DiscConfig, PatchGAN, d_image, d_pair
from .generator import Generator, GeneratorConfig
from .losses import LossReport, PerceptualExtractor, d_i_loss, d_p_loss, g_adv_losses, recon_loss

log = logging.getLogger(__name__)

CHECKPOINT_SUFFIX = ".ckpt"
LOG_FIELDS = ("step", "epoch", "l1", "perceptual", "g_adv_i", "g_adv_p",
              "d_i_loss", "d_p_loss", "lr")


@dataclass
class TrainConfig:
    lr0: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    epochs: int = 1
    decay_every: int = 50
    decay_factor: float = 0.5
    alpha: float = 1.0
    beta: float = 1.0
    mode: str = "multi"
    seed: int = 0
    checkpoint_every: int = 1
    grad_clip: float = 0.0                      # 0 disables clipping
    saturating_g_loss: bool = False
    dp_mismatched_real: bool = False
    adv_on_true_pose: bool = False
    include_target_in_sources: bool = False
    augment: AugmentParams | None = None

    def __post_init__(self):
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be > 0, got {self.lr0}")
        for name in ("adam_beta1", "adam_beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must be in [0, 1), got {v}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.decay_every < 1:
            raise ValueError(f"decay_every must be >= 1, got {self.decay_every}")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ValueError(f"decay_factor must be in (0, 1], got {self.decay_factor}")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")
        if self.mode not in ("single", "multi"):
            raise ValueError(f"mode must be 'single' or 'multi', got {self.mode!r}")
        if self.seed < 0:
            raise ValueError(f"seed must be unsigned, got {self.seed}")
        if self.checkpoint_every < 1:
            raise ValueError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
        if self.grad_clip < 0:
            raise ValueError(f"grad_clip must be >= 0, got {self.grad_clip}")


@dataclass
class TrainState:
    cfg: TrainConfig
    gen_cfg: GeneratorConfig
    disc_cfg_i: DiscConfig
    disc_cfg_p: DiscConfig
    gen: Generator
    d_i: PatchGAN
    d_p: PatchGAN
    opt_g: torch.optim.Adam
    opt_d_i: torch.optim.Adam
    opt_d_p: torch.optim.Adam
    phi: PerceptualExtractor
    rng: np.random.Generator
    epoch: int = 0
    global_step: int = 0
    raster: RasterConfig = field(default_factory=RasterConfig)


def lr_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Stepwise decay: lr0 * decay_factor^(epoch // decay_every)."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def make_state(cfg: TrainConfig, gen_cfg: GeneratorConfig,
               phi: PerceptualExtractor,
               disc_base_channels: int | None = None,
               disc_n_layers: int = 3) -> TrainState:
    """Build networks, optimizers, and RNG from one seed."""
    if gen_cfg.mode != cfg.mode:
        gen_cfg = GeneratorConfig(**{**asdict(gen_cfg), "mode": cfg.mode})
    torch.manual_seed(cfg.seed)
    gen = Generator(gen_cfg)
    base = disc_base_channels or gen_cfg.base_channels
    disc_cfg_i = DiscConfig(base_channels=base, n_layers=disc_n_layers, in_channels=3)
    disc_cfg_p = DiscConfig(base_channels=base, n_layers=disc_n_layers, in_channels=6)
    d_i = PatchGAN(disc_cfg_i)
    d_p = PatchGAN(disc_cfg_p)
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    lr = lr_schedule(0, cfg)
    return TrainState(
        cfg=cfg, gen_cfg=gen_cfg, disc_cfg_i=disc_cfg_i, disc_cfg_p=disc_cfg_p,
        gen=gen, d_i=d_i, d_p=d_p,
        opt_g=torch.optim.Adam(gen.parameters(), lr=lr, betas=betas),
        opt_d_i=torch.optim.Adam(d_i.parameters(), lr=lr, betas=betas),
        opt_d_p=torch.optim.Adam(d_p.parameters(), lr=lr, betas=betas),
        phi=phi, rng=np.random.default_rng(cfg.seed),
    )


def set_lr(state: TrainState, lr: float):
    for opt in (state.opt_g, state.opt_d_i, state.opt_d_p):
        for group in opt.param_groups:
            group["lr"] = lr


def _check_finite(value: torch.Tensor, name: str, step: int):
    if not torch.isfinite(value).all():
        raise RuntimeError(f"non-finite {name} ({float(value.detach()):g}) at "
                           f"step {step}; aborting training")


def discriminator_step(state: TrainState, y_real: torch.Tensor,
                       y_fake: torch.Tensor, pair_real_img: torch.Tensor,
                       pair_pose: torch.Tensor,
                       y_fake_true_pose: torch.Tensor | None = None,
                       ) -> tuple[torch.Tensor, torch.Tensor]:
    """Update both critics on detached fakes; returns their loss values."""
    step = state.global_step
    li = d_i_loss(d_image(state.d_i, y_real), d_image(state.d_i, y_fake))
    if y_fake_true_pose is not None:
        extra = d_image(state.d_i, y_fake_true_pose)
        li = li + F.binary_cross_entropy_with_logits(
            extra.map, torch.zeros_like(extra.map))
    _check_finite(li, "d_i_loss", step)
    state.opt_d_i.zero_grad()
    li.backward()
    state.opt_d_i.step()

    lp = d_p_loss(d_pair(state.d_p, pair_real_img, pair_pose),
                  d_pair(state.d_p, y_fake, pair_pose))
    if state.cfg.dp_mismatched_real:
        mis = d_pair(state.d_p, y_real, pair_pose)
        lp = lp + F.binary_cross_entropy_with_logits(
            mis.map, torch.zeros_like(mis.map))
    _check_finite(lp, "d_p_loss", step)
    state.opt_d_p.zero_grad()
    lp.backward()
    state.opt_d_p.step()
    return li.detach(), lp.detach()


def generator_step(state: TrainState, y: torch.Tensor, y_hat: torch.Tensor,
                   y_hat_foreign: torch.Tensor, pair_pose: torch.Tensor,
                   d_i_val: torch.Tensor, d_p_val: torch.Tensor) -> LossReport:
    """Update G on reconstruction plus (weighted) fresh adversarial scores.

    Zero-weight adversarial terms are left out of the objective entirely so
    an alpha=beta=0 run takes exactly the pure-reconstruction gradient step;
    their values are still evaluated without gradients for the report.
    """
    cfg = state.cfg
    step = state.global_step
    l1, perc = recon_loss(y, y_hat, state.phi)
    _check_finite(l1, "l1", step)
    _check_finite(perc, "perceptual", step)

    need_grad = cfg.alpha > 0 or cfg.beta > 0
    with torch.enable_grad() if need_grad else torch.no_grad():
        s_i = d_image(state.d_i, y_hat_foreign)
        s_p = d_pair(state.d_p, y_hat_foreign, pair_pose)
        gi, gp = g_adv_losses(s_i, s_p, saturating=cfg.saturating_g_loss)
        if cfg.adv_on_true_pose:
            s_i_true = d_image(state.d_i, y_hat)
            gi_true, _ = g_adv_losses(s_i_true, s_p, saturating=cfg.saturating_g_loss)
            gi = (gi + gi_true) / 2
    _check_finite(gi, "g_adv_i", step)
    _check_finite(gp, "g_adv_p", step)

    total = l1 + perc
    if cfg.alpha > 0:
        total = total + cfg.alpha * gi
    if cfg.beta > 0:
        total = total + cfg.beta * gp
    _check_finite(total, "total_g", step)

    state.opt_g.zero_grad()
    total.backward()
    if cfg.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(state.gen.parameters(), cfg.grad_clip)
    state.opt_g.step()

    return LossReport(l1=l1.detach(), perceptual=perc.detach(),
                      g_adv_i=gi.detach(), g_adv_p=gp.detach(),
                      d_i_loss=d_i_val, d_p_loss=d_p_val,
                      total_g=total.detach(), alpha=cfg.alpha, beta=cfg.beta)


def train_step(triple, state: TrainState) -> LossReport:
    """One alternating optimization step on a single SKU triple."""
    y = torch.from_numpy(triple.target_image).unsqueeze(0)
    sources = [torch.from_numpy(s) for s in triple.sources]
    p = torch.from_numpy(triple.target_pose.pixels)
    p_foreign = torch.from_numpy(triple.foreign_pose.pixels)
    y_foreign = torch.from_numpy(triple.foreign_pair[0]).unsqueeze(0)

    y_hat = state.gen.generate(sources, p)
    y_hat_foreign = state.gen.generate(sources, p_foreign)

    d_i_val, d_p_val = discriminator_step(
        state, y, y_hat_foreign.detach(), y_foreign, p_foreign,
        y_fake_true_pose=y_hat.detach() if state.cfg.adv_on_true_pose else None)
    report = generator_step(state, y, y_hat, y_hat_foreign, p_foreign,
                            d_i_val, d_p_val)
    state.global_step += 1
    return report


def _atomic_torch_save(payload: dict, path: Path):
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)


def save_checkpoint(state: TrainState, path) -> Path:
    """Named-tensor archive: model weights under g./d_i./d_p. prefixes,
    optimizer moments, counters, RNG states, and the config snapshot."""
    path = Path(path)
    if path.suffix != CHECKPOINT_SUFFIX:
        path = path.with_suffix(CHECKPOINT_SUFFIX)
    model = {}
    for prefix, module in (("g", state.gen), ("d_i", state.d_i), ("d_p", state.d_p)):
        for k, v in module.state_dict().items():
            model[f"{prefix}.{k}"] = v
    cfg_dict = asdict(state.cfg)
    if cfg_dict.get("augment") is not None:
        cfg_dict["augment"] = asdict(state.cfg.augment)
    payload = {
        "model": model,
        "opt_g": state.opt_g.state_dict(),
        "opt_d_i": state.opt_d_i.state_dict(),
        "opt_d_p": state.opt_d_p.state_dict(),
        "epoch": state.epoch,
        "global_step": state.global_step,
        "rng_state": {
            "numpy": state.rng.bit_generator.state,
            "torch": torch.get_rng_state(),
        },
        "config": {
            "train": cfg_dict,
            "generator": asdict(state.gen_cfg),
            "disc_i": asdict(state.disc_cfg_i),
            "disc_p": asdict(state.disc_cfg_p),
        },
    }
    _atomic_torch_save(payload, path)
    return path


def load_checkpoint(path) -> dict:
    return torch.load(path, map_location="cpu", weights_only=False)


def _train_cfg_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    if d.get("augment") is not None:
        d["augment"] = AugmentParams(**d["augment"])
    return TrainConfig(**d)


def _gen_cfg_from_dict(d: dict) -> GeneratorConfig:
    d = dict(d)
    d["image_size"] = tuple(d["image_size"])
    return GeneratorConfig(**d)


def restore_state(path, phi: PerceptualExtractor,
                  cfg: TrainConfig | None = None) -> TrainState:
    """Rebuild a TrainState that continues bit-for-bit from the checkpoint.

    Weights, optimizer moments, counters, and RNG states come from the file;
    hyperparameters come from cfg when given (so a resumed run can extend the
    epoch budget), else from the checkpoint's snapshot."""
    ckpt = load_checkpoint(path)
    if cfg is None:
        cfg = _train_cfg_from_dict(ckpt["config"]["train"])
    gen_cfg = _gen_cfg_from_dict(ckpt["config"]["generator"])
    state = make_state(cfg, gen_cfg, phi,
                       disc_base_channels=ckpt["config"]["disc_i"]["base_channels"],
                       disc_n_layers=ckpt["config"]["disc_i"]["n_layers"])
    model = ckpt["model"]
    for prefix, module in (("g", state.gen), ("d_i", state.d_i), ("d_p", state.d_p)):
        module.load_state_dict({k[len(prefix) + 1:]: v for k, v in model.items()
                                if k.startswith(prefix + ".")})
    state.opt_g.load_state_dict(ckpt["opt_g"])
    state.opt_d_i.load_state_dict(ckpt["opt_d_i"])
    state.opt_d_p.load_state_dict(ckpt["opt_d_p"])
    state.epoch = ckpt["epoch"]
    state.global_step = ckpt["global_step"]
    state.rng = np.random.default_rng()
    state.rng.bit_generator.state = ckpt["rng_state"]["numpy"]
    torch.set_rng_state(ckpt["rng_state"]["torch"])
    return state


def load_generator(path) -> tuple[Generator, dict]:
    """Inference-only load: just G and the config snapshot."""
    ckpt = load_checkpoint(path)
    gen = Generator(_gen_cfg_from_dict(ckpt["config"]["generator"]))
    gen.load_state_dict({k[2:]: v for k, v in ckpt["model"].items()
                         if k.startswith("g.")})
    gen.eval()
    return gen, ckpt["config"]


def fit(groups: list[SkuGroup], state: TrainState, out_dir,
        log_name: str = "metrics.jsonl") -> Path:
    """Train for cfg.epochs passes over the SKUs; returns final checkpoint path.

    Each epoch visits every SKU once in a seeded shuffled order; the metrics
    log gains one JSON line per step.  Epoch checkpoints land every
    checkpoint_every epochs, and final.ckpt is always written.
    """
    if len(groups) < 2:
        raise ValueError("training needs at least 2 SKU groups")
    cfg = state.cfg
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / log_name
    last_good: Path | None = None

    with open(log_path, "a") as log_file:
        for epoch in range(state.epoch, cfg.epochs):
            lr = lr_schedule(epoch, cfg)
            set_lr(state, lr)
            order = state.rng.permutation(len(groups))
            for gi in order:
                triple = sample_triple(
                    groups, int(gi), state.rng, state.raster, mode=cfg.mode,
                    include_target_in_sources=cfg.include_target_in_sources,
                    augment=cfg.augment)
                report = train_step(triple, state)
                record = {"step": state.global_step, "epoch": epoch}
                record.update({k: v for k, v in report.as_floats().items()
                               if k != "total_g"})
                record["lr"] = lr
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            state.epoch = epoch + 1
            if (epoch + 1) % cfg.checkpoint_every == 0 or state.epoch == cfg.epochs:
                try:
                    last_good = save_checkpoint(
                        state, out_dir / f"ckpt_epoch_{state.epoch:04d}{CHECKPOINT_SUFFIX}")
                except OSError as e:
                    raise RuntimeError(
                        f"checkpoint write failed ({e}); last good checkpoint: "
                        f"{last_good if last_good else 'none'}") from e

    final = save_checkpoint(state, out_dir / f"final{CHECKPOINT_SUFFIX}")
    log.info("training done: %d steps, final checkpoint %s", state.global_step, final)
    return final
