"""Flat dotted key-value run configuration.

One line per setting (`section.key = value`), full- or trailing-line `#`
comments, every key validated against the registry below.  Unknown keys and
duplicate keys are errors that name the offending key, so typos fail fast
instead of silently training with a default.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .data import AugmentParams, RasterConfig
from .generator import GeneratorConfig
from .losses import ConvFeatureExtractor, IdentityExtractor, PerceptualExtractor
from .trainer import TrainConfig


class ConfigError(ValueError):
    """Malformed config file, unknown key, or invalid value."""


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _size(s: str) -> tuple[int, int]:
    parts = s.lower().split("x")
    if len(parts) != 2:
        raise ValueError(f"expected HxW, got {s!r}")
    return int(parts[0]), int(parts[1])


def _float_list(s: str) -> tuple[float, ...] | None:
    s = s.strip()
    if not s:
        return None
    return tuple(float(tok) for tok in s.split(","))


@dataclass(frozen=True)
class _Key:
    parse: Callable[[str], object]
    default: object
    help: str


REGISTRY: dict[str, _Key] = {
    "data.root": _Key(str, "data", "dataset root with train/ (and test/) splits"),
    "out.dir": _Key(str, "runs/exp", "output directory for checkpoints and logs"),

    "train.lr0": _Key(float, 1e-4, "initial learning rate"),
    "train.adam_beta1": _Key(float, 0.5, "Adam first-moment decay"),
    "train.adam_beta2": _Key(float, 0.999, "Adam second-moment decay"),
    "train.epochs": _Key(int, 1, "passes over the SKU list"),
    "train.decay_every": _Key(int, 50, "epochs between learning-rate decays"),
    "train.decay_factor": _Key(float, 0.5, "multiplicative learning-rate decay"),
    "train.seed": _Key(int, 0, "seed for init, shuffling, and sampling"),
    "train.checkpoint_every": _Key(int, 1, "epochs between checkpoints"),
    "train.grad_clip": _Key(float, 0.0, "generator gradient-norm clip, 0 = off"),
    "train.mode": _Key(str, "multi", "'single' or 'multi' source images"),
    "train.saturating_g_loss": _Key(_bool, False,
                                    "use the literal log(1-D) generator loss"),
    "train.dp_mismatched_real": _Key(_bool, False,
                                     "also feed (real image, foreign pose) to D_P as fake"),
    "train.adv_on_true_pose": _Key(_bool, False,
                                   "also run the true-pose generation through D_I"),
    "train.include_target_in_sources": _Key(_bool, False,
                                            "let the encoder see the target image"),

    "loss.alpha": _Key(float, 1.0, "weight of the image-critic generator term"),
    "loss.beta": _Key(float, 1.0, "weight of the pair-critic generator term"),
    "loss.lambda_k": _Key(_float_list, None,
                          "comma list of per-stage perceptual weights, empty = all 1"),

    "generator.base_channels": _Key(int, 64, "stem width; deeper layers scale from it"),
    "generator.n_res_blocks": _Key(int, 6, "residual blocks in the image encoder"),
    "generator.lstm_hidden_channels": _Key(int, 256, "visual code channels"),
    "generator.image_size": _Key(_size, (256, 256), "working resolution HxW"),

    "disc.base_channels": _Key(int, 0, "critic width, 0 = match generator"),
    "disc.n_layers": _Key(int, 3, "stride-2 critic layers (3 = 70x70 field)"),

    "perceptual.arch": _Key(str, "vgg19", "'vgg19', 'toy', or 'identity'"),
    "perceptual.weights_path": _Key(str, "", "named-tensor archive for the extractor"),

    "augment.enabled": _Key(_bool, False, "random crop/flip/rotate during training"),
    "augment.crop_fraction": _Key(float, 0.9, "crop side as a fraction of the image"),
    "augment.hflip_prob": _Key(float, 0.5, "horizontal flip probability"),
    "augment.max_rotate": _Key(float, 10.0, "max rotation magnitude in degrees"),

    "raster.line_width": _Key(int, 0, "pose limb width in pixels, 0 = auto-scale"),
    "raster.vis_threshold": _Key(float, 0.1, "min keypoint confidence to draw"),
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Registry-validated key/value map; starts from defaults."""
    values = {k: spec.default for k, spec in REGISTRY.items()}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in REGISTRY:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate config key {key!r}")
        seen.add(key)
        try:
            values[key] = REGISTRY[key].parse(val)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {e}") from e
    return values


def apply_overrides(values: dict[str, object], overrides: dict[str, str]) -> dict[str, object]:
    """CLI flags override file values, with the same validation."""
    for key, val in overrides.items():
        if key not in REGISTRY:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            values[key] = REGISTRY[key].parse(val)
        except ValueError as e:
            raise ConfigError(f"bad value for {key!r}: {e}") from e
    return values


@dataclass
class RunConfig:
    data_root: str
    out_dir: str
    train: TrainConfig
    generator: GeneratorConfig
    disc_base_channels: int | None
    disc_n_layers: int
    perceptual_arch: str
    perceptual_weights: str | None
    perceptual_lambda: tuple[float, ...] | None
    raster: RasterConfig


def build_run_config(values: dict[str, object]) -> RunConfig:
    try:
        augment = None
        if values["augment.enabled"]:
            augment = AugmentParams(
                crop_fraction=values["augment.crop_fraction"],
                hflip_prob=values["augment.hflip_prob"],
                max_rotate=values["augment.max_rotate"],
                seed=values["train.seed"],
            )
        train = TrainConfig(
            lr0=values["train.lr0"],
            adam_beta1=values["train.adam_beta1"],
            adam_beta2=values["train.adam_beta2"],
            epochs=values["train.epochs"],
            decay_every=values["train.decay_every"],
            decay_factor=values["train.decay_factor"],
            alpha=values["loss.alpha"],
            beta=values["loss.beta"],
            mode=values["train.mode"],
            seed=values["train.seed"],
            checkpoint_every=values["train.checkpoint_every"],
            grad_clip=values["train.grad_clip"],
            saturating_g_loss=values["train.saturating_g_loss"],
            dp_mismatched_real=values["train.dp_mismatched_real"],
            adv_on_true_pose=values["train.adv_on_true_pose"],
            include_target_in_sources=values["train.include_target_in_sources"],
            augment=augment,
        )
        generator = GeneratorConfig(
            base_channels=values["generator.base_channels"],
            n_res_blocks=values["generator.n_res_blocks"],
            lstm_hidden_channels=values["generator.lstm_hidden_channels"],
            image_size=values["generator.image_size"],
            mode=values["train.mode"],
        )
        arch = values["perceptual.arch"]
        if arch not in ("vgg19", "toy", "identity"):
            raise ValueError(f"perceptual.arch must be vgg19, toy, or identity, "
                             f"got {arch!r}")
        lw = values["raster.line_width"]
        raster = RasterConfig(line_width=lw if lw > 0 else None,
                              vis_threshold=values["raster.vis_threshold"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    return RunConfig(
        data_root=values["data.root"],
        out_dir=values["out.dir"],
        train=train,
        generator=generator,
        disc_base_channels=values["disc.base_channels"] or None,
        disc_n_layers=values["disc.n_layers"],
        perceptual_arch=arch,
        perceptual_weights=values["perceptual.weights_path"] or None,
        perceptual_lambda=values["loss.lambda_k"],
        raster=raster,
    )


def load_run_config(path, overrides: dict[str, str] | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    values = parse_config_text(p.read_text(), source=str(p))
    if overrides:
        apply_overrides(values, overrides)
    return build_run_config(values)


def build_perceptual(cfg: RunConfig) -> PerceptualExtractor:
    """Instantiate the extractor the config asks for."""
    if cfg.perceptual_arch == "identity":
        return IdentityExtractor()
    if cfg.perceptual_arch == "toy":
        phi = ConvFeatureExtractor.toy(seed=cfg.train.seed)
        if cfg.perceptual_lambda is not None:
            if len(cfg.perceptual_lambda) != len(phi.layer_names):
                raise ConfigError(
                    f"loss.lambda_k needs {len(phi.layer_names)} entries for the "
                    f"toy extractor, got {len(cfg.perceptual_lambda)}")
            if any(w < 0 for w in cfg.perceptual_lambda):
                raise ConfigError("loss.lambda_k entries must be non-negative")
            phi.weights = tuple(float(w) for w in cfg.perceptual_lambda)
        return phi
    try:
        return ConvFeatureExtractor.vgg19(weights_path=cfg.perceptual_weights,
                                          stage_weights=cfg.perceptual_lambda)
    except ValueError as e:
        raise ConfigError(str(e)) from e


def default_config_text() -> str:
    """A complete config file with every key at its default, for reference."""
    lines = ["# posegen run configuration (all keys shown with defaults)"]
    for key, spec in REGISTRY.items():
        d = spec.default
        if d is None:
            rendered = ""
        elif isinstance(d, bool):
            rendered = "true" if d else "false"
        elif isinstance(d, tuple):
            rendered = "x".join(str(v) for v in d)
        else:
            rendered = str(d)
        lines.append(f"{key} = {rendered}    # {spec.help}")
    return "\n".join(lines) + "\n"
