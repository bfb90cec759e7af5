"""Declarative run configuration: flat ``section.key=value`` text files.

Every tunable of every module lives under one dotted key with a documented
default. Unknown keys are rejected so typos fail loudly, and the resolved
configuration (defaults applied) is dumped next to every output.
"""

from __future__ import annotations

from .augment import AugmentConfig
from .optim import LarsConfig
from .train import FinetuneConfig, PretrainConfig


class ConfigError(ValueError):
    pass


def _freeze_mode(v):
    if v not in ("encoder_all", "all_but_last_stage"):
        raise ConfigError(f"invalid freeze_mode {v!r}")
    return v


def _preset(v):
    if v not in ("tiny", "paper"):
        raise ConfigError(f"invalid model.preset {v!r}")
    return v


# key -> (parser, default); "auto" for pretrain.base_lr means 0.3 * 2N / 256
SCHEMA = {
    "seed": (int, 0),
    "model.preset": (_preset, "tiny"),
    "data.image_size": (int, 64),
    "data.blob_contrast": (float, 0.5),
    "data.noise_sigma": (float, 0.05),
    "augment.crop_scale_min": (float, 0.5),
    "augment.crop_scale_max": (float, 0.8),
    "augment.target_size": (int, 32),
    "augment.flip_prob": (float, 0.5),
    "augment.brightness_min": (float, 0.8),
    "augment.brightness_max": (float, 1.2),
    "augment.contrast_min": (float, 0.8),
    "augment.contrast_max": (float, 1.2),
    "augment.contrast_prob": (float, 0.2),
    "augment.norm_mean": (float, 0.5),
    "augment.norm_std": (float, 0.5),
    "loss.tau": (float, 0.5),
    "pretrain.epochs": (int, 60),
    "pretrain.pairs_per_batch": (int, 128),
    "pretrain.base_lr": (str, "auto"),
    "pretrain.warmup_frac": (float, 0.1),
    "optim.momentum": (float, 0.9),
    "optim.weight_decay": (float, 1e-6),
    "optim.trust_coefficient": (float, 1e-3),
    "finetune.epochs": (int, 40),
    "finetune.batch_size": (int, 32),
    "finetune.lr": (float, 0.01),
    "finetune.momentum": (float, 0.9),
    "finetune.freeze_mode": (_freeze_mode, "encoder_all"),
}


def parse_config_file(path):
    """Read a key=value file; blank lines and '#' comments are skipped."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, raw = line.partition("=")
            key = key.strip()
            if key not in SCHEMA:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = raw.strip()
    return values


def resolve(raw=None, seed_override=None):
    """Apply defaults and type-parse into a flat {key: value} dict."""
    raw = raw or {}
    resolved = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                resolved[key] = parse(raw[key])
            except ConfigError:
                raise
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from exc
        else:
            resolved[key] = default
    if seed_override is not None:
        resolved["seed"] = seed_override
    return resolved


def dump(resolved, path):
    with open(path, "w") as f:
        for key in sorted(resolved):
            f.write(f"{key}={resolved[key]}\n")


def augment_config(r):
    return AugmentConfig(
        crop_scale_min=r["augment.crop_scale_min"],
        crop_scale_max=r["augment.crop_scale_max"],
        target_size=r["augment.target_size"],
        flip_prob=r["augment.flip_prob"],
        brightness_range=(r["augment.brightness_min"], r["augment.brightness_max"]),
        contrast_range=(r["augment.contrast_min"], r["augment.contrast_max"]),
        contrast_prob=r["augment.contrast_prob"],
        norm_mean=r["augment.norm_mean"],
        norm_std=r["augment.norm_std"],
    )


def pretrain_config(r):
    n = r["pretrain.pairs_per_batch"]
    base_lr = r["pretrain.base_lr"]
    if base_lr == "auto":
        base_lr = 0.3 * (2 * n) / 256.0
    else:
        base_lr = float(base_lr)
    return PretrainConfig(
        epochs=r["pretrain.epochs"],
        pairs_per_batch=n,
        tau=r["loss.tau"],
        seed=r["seed"],
        preset=r["model.preset"],
        lars=LarsConfig(
            base_lr=base_lr,
            momentum=r["optim.momentum"],
            weight_decay=r["optim.weight_decay"],
            trust_coefficient=r["optim.trust_coefficient"],
        ),
        warmup_frac=r["pretrain.warmup_frac"],
        augment=augment_config(r),
    )


def finetune_config(r):
    return FinetuneConfig(
        epochs=r["finetune.epochs"],
        batch_size=r["finetune.batch_size"],
        lr=r["finetune.lr"],
        momentum=r["finetune.momentum"],
        freeze_mode=r["finetune.freeze_mode"],
        seed=r["seed"],
    )


def load(path=None, seed_override=None):
    raw = parse_config_file(path) if path else {}
    return resolve(raw, seed_override=seed_override)
