"""Experiment configuration: defaults, JSON overrides, and the resolved echo.

One JSON file configures a whole run. User files override the defaults block
by block; a key the defaults do not know is a configuration error rather than
a silent typo. The fully merged dict is what gets echoed beside outputs.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .geometry import CameraRig, default_rig
from .model import ModelConfig, SchemeConfig
from .scene import SceneConfig
from .training import TrainConfig

# Model width/vocab/sequence length are derived from the scene block; the
# model block holds only the free architecture knobs.
_MODEL_KEYS = ("layers", "decoder_heads", "ffn_mult", "fuser_hidden")

DEFAULTS: dict = {
    "scene": SceneConfig().to_dict(),
    "model": {k: getattr(ModelConfig(), k) for k in _MODEL_KEYS},
    "scheme": SchemeConfig().to_dict(),
    "train": TrainConfig().to_dict(),
    "corpus": {"samples": 2048, "seed": 0},
    # None -> evenly spaced default rig for scene.views; otherwise a dict in
    # the corpus-manifest rig format.
    "rig": None,
}


def deep_merge(base: dict, override: dict, path: str = "") -> dict:
    """Merge override into a copy of base; unknown or mistyped keys refuse."""
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        current = base[key]
        if isinstance(current, dict) and isinstance(value, dict):
            out[key] = deep_merge(current, value, where)
        elif isinstance(current, dict) or (isinstance(value, dict) and current is not None):
            raise ConfigError(f"config key {where!r} must be a {'table' if isinstance(current, dict) else 'scalar'}")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | Path | None) -> dict:
    """DEFAULTS overlaid with the JSON file at path (if any)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        user = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {p} is not valid JSON: {e}") from None
    if not isinstance(user, dict):
        raise ConfigError(f"config file {p} must hold a JSON object")
    return deep_merge(DEFAULTS, user)


@dataclass(frozen=True)
class Resolved:
    """Typed view of one merged config dict."""

    scene: SceneConfig
    scheme: SchemeConfig
    train: TrainConfig
    model_kwargs: dict
    corpus_samples: int
    corpus_seed: int
    rig: CameraRig
    raw: dict


def resolve(config: dict) -> Resolved:
    from .corpus import rig_from_dict  # local import: corpus imports scene

    scene = SceneConfig.from_dict(config["scene"])
    for key in config["model"]:
        if key not in _MODEL_KEYS:
            raise ConfigError(f"unknown config key model.{key!r}")
    samples = int(config["corpus"]["samples"])
    if samples < 1:
        raise ConfigError(f"corpus.samples must be >= 1, got {samples}")
    rig = default_rig(scene.views) if config["rig"] is None else rig_from_dict(config["rig"])
    if len(rig) != scene.views:
        raise ConfigError(f"rig has {len(rig)} views but the scene expects {scene.views}")
    return Resolved(
        scene=scene,
        scheme=SchemeConfig.from_dict(config["scheme"]),
        train=TrainConfig.from_dict(config["train"]),
        model_kwargs=dict(config["model"]),
        corpus_samples=samples,
        corpus_seed=int(config["corpus"]["seed"]),
        rig=rig,
        raw=config,
    )


def echo_config(config: dict, out_dir: str | Path) -> Path:
    """Write the merged config beside a run's outputs; returns the path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.echo.json"
    path.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")
    return path
