"""Flat key=value run configuration (dot-namespaced keys, '#' comments).

Command-line flags override file values; the manifest records the merged
effective configuration so a run can be re-executed exactly.
"""

from __future__ import annotations

from pathlib import Path

from .errors import UsageError
from .losses import LossWeights
from .models import BackboneConfig, ModelVariant
from .training import TrainConfig


def _parse_channels(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(","))


def _parse_resolution(text: str) -> tuple[int, int]:
    parts = [int(p) for p in text.replace("x", ",").split(",")]
    if len(parts) != 2:
        raise ValueError(f"resolution must be HxW, got {text!r}")
    return parts[0], parts[1]


def _parse_optional_float(text: str) -> float | None:
    return None if text.lower() in ("none", "off") else float(text)


_PARSERS = {
    "model.variant": ModelVariant,
    "model.feature_dim": int,
    "model.channels": _parse_channels,
    "model.resolution": _parse_resolution,
    "model.diff_hidden": int,
    "model.ad_hidden": int,
    "model.ad_input": str,
    "loss.alpha": float,
    "loss.beta": float,
    "train.lr0": float,
    "train.lr_decay": float,
    "train.decay_every": int,
    "train.batch_size": int,
    "train.epochs": int,
    "train.seed": int,
    "train.grad_clip": _parse_optional_float,
    "train.early_stop_patience": int,
    "train.early_stop_tolerance": float,
    "train.val_fraction": float,
}

VALID_KEYS = tuple(sorted(_PARSERS))


def parse_config_file(path) -> dict[str, str]:
    """Read raw key=value pairs, rejecting unknown keys."""
    values: dict[str, str] = {}
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _PARSERS:
            raise UsageError(
                f"{path}:{lineno}: unknown config key {key!r}; valid keys: {', '.join(VALID_KEYS)}"
            )
        values[key] = value.strip()
    return values


def build_train_config(values: dict[str, str], default_resolution=None) -> TrainConfig:
    """Turn merged raw values into a validated TrainConfig.

    ``default_resolution`` (usually inferred from the dataset) applies when
    model.resolution is not set explicitly.
    """
    parsed = {}
    for key, raw in values.items():
        if key not in _PARSERS:
            raise UsageError(f"unknown config key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
        try:
            parsed[key] = _PARSERS[key](raw)
        except (ValueError, KeyError) as exc:
            raise UsageError(f"bad value for {key}: {raw!r} ({exc})") from exc

    backbone_defaults = BackboneConfig()
    resolution = parsed.get("model.resolution", default_resolution or backbone_defaults.resolution)
    try:
        backbone = BackboneConfig(
            resolution=tuple(resolution),
            channels=parsed.get("model.channels", backbone_defaults.channels),
            feature_dim=parsed.get("model.feature_dim", backbone_defaults.feature_dim),
            diff_hidden=parsed.get("model.diff_hidden", backbone_defaults.diff_hidden),
            ad_hidden=parsed.get("model.ad_hidden", backbone_defaults.ad_hidden),
            ad_input=parsed.get("model.ad_input", backbone_defaults.ad_input),
        )
        weights = LossWeights(
            alpha=parsed.get("loss.alpha", 0.75), beta=parsed.get("loss.beta", 0.75)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    defaults = TrainConfig(backbone=backbone, weights=weights)
    try:
        return TrainConfig(
            variant=parsed.get("model.variant", defaults.variant),
            weights=weights,
            lr0=parsed.get("train.lr0", defaults.lr0),
            lr_decay=parsed.get("train.lr_decay", defaults.lr_decay),
            decay_every=parsed.get("train.decay_every", defaults.decay_every),
            batch_size=parsed.get("train.batch_size", defaults.batch_size),
            epochs=parsed.get("train.epochs", defaults.epochs),
            seed=parsed.get("train.seed", defaults.seed),
            backbone=backbone,
            grad_clip=parsed.get("train.grad_clip", defaults.grad_clip),
            early_stop_patience=parsed.get("train.early_stop_patience", defaults.early_stop_patience),
            early_stop_tolerance=parsed.get("train.early_stop_tolerance", defaults.early_stop_tolerance),
            val_fraction=parsed.get("train.val_fraction", defaults.val_fraction),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def config_snapshot(cfg: TrainConfig) -> dict:
    """Effective configuration as flat keys, for run manifests."""
    return {
        "model.variant": cfg.variant.value,
        "model.feature_dim": cfg.backbone.feature_dim,
        "model.channels": ",".join(str(c) for c in cfg.backbone.channels),
        "model.resolution": f"{cfg.backbone.resolution[0]}x{cfg.backbone.resolution[1]}",
        "model.diff_hidden": cfg.backbone.diff_hidden,
        "model.ad_hidden": cfg.backbone.ad_hidden,
        "model.ad_input": cfg.backbone.ad_input,
        "loss.alpha": cfg.weights.alpha,
        "loss.beta": cfg.weights.beta,
        "train.lr0": cfg.lr0,
        "train.lr_decay": cfg.lr_decay,
        "train.decay_every": cfg.decay_every,
        "train.batch_size": cfg.batch_size,
        "train.epochs": cfg.epochs,
        "train.seed": cfg.seed,
        "train.grad_clip": cfg.grad_clip,
        "train.early_stop_patience": cfg.early_stop_patience,
        "train.early_stop_tolerance": cfg.early_stop_tolerance,
        "train.val_fraction": cfg.val_fraction,
    }
