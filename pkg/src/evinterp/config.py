"""One YAML schema shared by every command.

Sections: ``scene`` (synthetic data), ``simulator`` (event generation),
``model``, ``train`` (including ``weights``) and ``eval``. Top-level keys
``seed``, ``skip`` and ``preset`` sit beside them. Unknown keys are errors
naming the offending field. Command-line flags override file values.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import yaml

from .events import SimulatorConfig
from .interp import ModelConfig
from .losses import LossWeights
from .trainer import PRESETS, TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    n_scenes: int = 48
    n_frames: int = 9
    width: int = 64
    height: int = 64
    fps_gt: float = 240.0
    motion: tuple[str, ...] = ("quadratic", "bounce")
    n_objects: tuple[int, int] = (1, 3)
    speed: float = 8.0
    channels: int = 1
    static: bool = False
    oversample: int = 2

    def __post_init__(self):
        if self.n_scenes < 1:
            raise ValueError("n_scenes must be positive")
        if self.oversample < 1:
            raise ValueError("oversample must be positive")


@dataclass(frozen=True)
class EvalConfig:
    aggregation: str = "whole"
    variant: str = "full"


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    skip: int = 7
    preset: Optional[str] = None
    scene: SceneConfig = field(default_factory=SceneConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: PRESETS["desk"])
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"]["motion"] = list(self.scene.motion)
        d["scene"]["n_objects"] = list(self.scene.n_objects)
        return d


_SECTIONS = {"scene": SceneConfig, "simulator": SimulatorConfig, "model": ModelConfig,
             "train": TrainConfig, "eval": EvalConfig}
_TUPLES = {("scene", "motion"), ("scene", "n_objects")}


def _build(cls, values: dict, where: str, base=None):
    names = {f.name for f in fields(cls)}
    for key in values:
        if key not in names:
            raise ConfigError(f"unknown field '{where}.{key}'")
    kw = {}
    for key, val in values.items():
        if cls is TrainConfig and key == "weights":
            if not isinstance(val, dict):
                raise ConfigError(f"field '{where}.weights' must be a mapping")
            val = _build(LossWeights, val, f"{where}.weights", base.weights if base else None)
        elif (where, key) in _TUPLES:
            val = tuple(val)
        kw[key] = val
    try:
        return replace(base, **kw) if base is not None else cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value in '{where}': {exc}") from exc


def from_dict(data: dict[str, Any]) -> RunConfig:
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    top = {f.name for f in fields(RunConfig)}
    for key in data:
        if key not in top:
            raise ConfigError(f"unknown field '{key}'")
    preset = data.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"field 'preset' must be one of {sorted(PRESETS)}")
    cfg = RunConfig()
    if preset is not None:
        cfg = replace(cfg, preset=preset, train=PRESETS[preset])
    kw = {}
    for name, cls in _SECTIONS.items():
        section = data.get(name)
        if section is None:
            continue
        if not isinstance(section, dict):
            raise ConfigError(f"section '{name}' must be a mapping")
        kw[name] = _build(cls, section, name, getattr(cfg, name))
    for key in ("seed", "skip"):
        if key in data:
            if not isinstance(data[key], int) or isinstance(data[key], bool):
                raise ConfigError(f"field '{key}' must be an integer")
            kw[key] = data[key]
    cfg = replace(cfg, **kw)
    # the top-level seed also seeds training
    cfg = replace(cfg, train=replace(cfg.train, seed=cfg.seed))
    if cfg.skip < 1:
        raise ConfigError("field 'skip' must be at least 1")
    if cfg.eval.aggregation not in ("whole", "center"):
        raise ConfigError("field 'eval.aggregation' must be 'whole' or 'center'")
    return cfg


def load_config(path) -> RunConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return from_dict(data)


def with_overrides(cfg: RunConfig, **flags) -> RunConfig:
    """Apply command-line values; ``None`` means the flag was not given."""
    if flags.get("preset") is not None:
        if flags["preset"] not in PRESETS:
            raise ConfigError(f"unknown preset {flags['preset']!r}")
        cfg = replace(cfg, preset=flags["preset"], train=replace(PRESETS[flags["preset"]], seed=cfg.train.seed))
    if flags.get("seed") is not None:
        cfg = replace(cfg, seed=flags["seed"], train=replace(cfg.train, seed=flags["seed"]))
    if flags.get("skip") is not None:
        if flags["skip"] < 1:
            raise ConfigError("--skip must be at least 1")
        cfg = replace(cfg, skip=flags["skip"])
    ev = {k: flags[k] for k in ("aggregation", "variant") if flags.get(k) is not None}
    if ev:
        cfg = replace(cfg, eval=replace(cfg.eval, **ev))
    if flags.get("variant") is not None:
        cfg = replace(cfg, model=replace(cfg.model, variant=flags["variant"]))
    return cfg


def dump_config(cfg: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)
