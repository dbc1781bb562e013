"""Config-file parsing and serialization.

Files use `key = value` lines under `[section]` headers with `#` comments.
Unknown keys raise `UsageError` listing the valid ones. The same mapping
format serializes a model config into checkpoints.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .kan import RankConfig
from .losses import LossConfig
from .model import ModelConfig, config_for_variant
from .synthdata import SynthSpec


class UsageError(ValueError):
    """Bad flag or config key; the message lists what would be valid."""


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 16
    lr: float = 1e-3
    lr_min: float = 1e-6
    weight_decay: float = 1e-5
    clip_norm: float = 1.0
    seed: int = 0
    val_every: int = 5  # every n-th sample goes to validation; 0 = no split
    augment: bool = False
    prune_every: int = 10  # epochs between magnitude-pruning passes; 0 = off
    grid_noise: float = 0.0
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def load_config_file(path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    text = Path(path).read_text()
    parser.read_string(text)
    return {name: dict(parser[name]) for name in parser.sections()}


def _to_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def _to_ints(value: str) -> tuple[int, ...]:
    return tuple(int(v) for v in value.split(","))


def _to_floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(","))


_MODEL_KEYS = {
    "variant", "num_classes", "stage_channels", "fpn_width", "pre_kan_projection",
    "rank", "spline_rank", "energy_threshold", "prune_threshold",
    "grid_size", "spline_order", "grid_lo", "grid_hi",
    "fpn_conv", "kan_hidden_ratio", "share_splines", "learnable_fusion",
}


def model_config_from(section: dict[str, str]) -> ModelConfig:
    unknown = set(section) - _MODEL_KEYS
    if unknown:
        raise UsageError(
            f"unknown [model] keys {sorted(unknown)}; valid keys: {sorted(_MODEL_KEYS)}"
        )
    variant = section.get("variant", "karma")
    kw = {}
    if "num_classes" in section:
        kw["num_classes"] = int(section["num_classes"])
    if "stage_channels" in section:
        kw["stage_channels"] = _to_ints(section["stage_channels"])
    if "fpn_width" in section:
        kw["fpn_width"] = int(section["fpn_width"])
    if "pre_kan_projection" in section:
        raw = section["pre_kan_projection"].strip().lower()
        kw["pre_kan_projection"] = None if raw in ("none", "") else int(section["pre_kan_projection"])
    rank_kw = {}
    for key, attr in (("rank", "r"), ("spline_rank", "r_f")):
        if key in section:
            rank_kw[attr] = int(section[key])
    for key in ("energy_threshold", "prune_threshold"):
        if key in section:
            rank_kw[key] = float(section[key])
    if "grid_size" in section:
        kw["grid_size"] = int(section["grid_size"])
    if "spline_order" in section:
        kw["spline_order"] = int(section["spline_order"])
    if "grid_lo" in section or "grid_hi" in section:
        kw["grid_range"] = (
            float(section.get("grid_lo", "-1")),
            float(section.get("grid_hi", "1")),
        )
    if "fpn_conv" in section:
        kw["fpn_conv"] = section["fpn_conv"].strip()
    if "kan_hidden_ratio" in section:
        kw["kan_hidden_ratio"] = float(section["kan_hidden_ratio"])
    for key in ("share_splines", "learnable_fusion"):
        if key in section:
            kw[key] = _to_bool(section[key])

    if variant in ("karma", "high", "flash"):
        cfg = config_for_variant(variant, **kw) if kw else config_for_variant(variant)
    else:
        cfg = ModelConfig(variant=variant, **kw).validate()
    if rank_kw:
        base = cfg.ranks
        cfg.ranks = RankConfig(
            r=rank_kw.get("r", base.r),
            r_f=rank_kw.get("r_f", base.r_f),
            energy_threshold=rank_kw.get("energy_threshold", base.energy_threshold),
            prune_threshold=rank_kw.get("prune_threshold", base.prune_threshold),
        )
    return cfg


def model_config_to_mapping(cfg: ModelConfig) -> dict[str, str]:
    return {
        "variant": cfg.variant,
        "num_classes": str(cfg.num_classes),
        "stage_channels": ",".join(str(c) for c in cfg.stage_channels),
        "fpn_width": str(cfg.fpn_width),
        "pre_kan_projection": "none" if cfg.pre_kan_projection is None else str(cfg.pre_kan_projection),
        "rank": str(cfg.ranks.r),
        "spline_rank": str(cfg.ranks.r_f),
        "energy_threshold": str(cfg.ranks.energy_threshold),
        "prune_threshold": str(cfg.ranks.prune_threshold),
        "grid_size": str(cfg.grid_size),
        "spline_order": str(cfg.spline_order),
        "grid_lo": str(cfg.grid_range[0]),
        "grid_hi": str(cfg.grid_range[1]),
        "fpn_conv": cfg.fpn_conv,
        "kan_hidden_ratio": str(cfg.kan_hidden_ratio),
        "share_splines": str(cfg.share_splines).lower(),
        "learnable_fusion": str(cfg.learnable_fusion).lower(),
    }


_TRAIN_FIELDS = {f.name: f.type for f in fields(TrainConfig)}
_LOSS_FIELDS = {f.name: f.type for f in fields(LossConfig)}


def _dataclass_from(section: dict[str, str], cls, known: dict, what: str):
    unknown = set(section) - set(known)
    if unknown:
        raise UsageError(
            f"unknown [{what}] keys {sorted(unknown)}; valid keys: {sorted(known)}"
        )
    kw = {}
    for f in fields(cls):
        if f.name not in section:
            continue
        raw = section[f.name]
        if f.type == "bool":
            kw[f.name] = _to_bool(raw)
        elif f.type == "int":
            kw[f.name] = int(raw)
        elif f.type == "float":
            kw[f.name] = float(raw)
        else:
            kw[f.name] = raw
    return cls(**kw)


def train_config_from(section: dict[str, str]) -> TrainConfig:
    return _dataclass_from(section, TrainConfig, _TRAIN_FIELDS, "train")


def loss_config_from(section: dict[str, str]) -> LossConfig:
    return _dataclass_from(section, LossConfig, _LOSS_FIELDS, "loss")


_SYNTH_KEYS = {"height", "width", "num_classes", "class_kinds", "frequencies", "seed", "snap"}


def synth_spec_from(section: dict[str, str]) -> SynthSpec:
    unknown = set(section) - _SYNTH_KEYS
    if unknown:
        raise UsageError(
            f"unknown [synth] keys {sorted(unknown)}; valid keys: {sorted(_SYNTH_KEYS)}"
        )
    kw = {}
    for key in ("height", "width", "num_classes", "seed", "snap"):
        if key in section:
            kw[key] = int(section[key])
    if "class_kinds" in section:
        kw["class_kinds"] = tuple(k.strip() for k in section["class_kinds"].split(","))
    if "frequencies" in section:
        kw["frequencies"] = _to_floats(section["frequencies"])
    return SynthSpec(**kw).validate()
