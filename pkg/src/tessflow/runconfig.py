"""Run configuration shared by every command-line step.

A run is described by one JSON file. Relative paths inside it are resolved
against the directory holding the file, so a run directory can be moved or
copied as a unit. Example::

    {
      "scale": "desk",
      "data_dir": "data",
      "output_dir": "out",
      "num_pairs": 10,
      "dynamic_fraction": 0.5,
      "seed": 0,
      "noise_power": 30.0,
      "epochs": 50,
      "batch_size": 2,
      "planeflow_steps": 200,
      "seg_threshold": 0.6,
      "optimizer": {"lr": 0.001, "decay": 0.9, "decay_every": 2, "warmup_ratio": 0.2},
      "model": {"points": 8},
      "cfar": {"num_background": 4, "num_guard": 1, "pfa": 1e-6}
    }

Every key is optional. ``scale`` picks the radar, preprocessing and model
presets ("desk" or "full"); ``model`` entries override the preset.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .cfar import CfarConfig
from .dataset import DEFAULT_TRAIN_NOISE
from .model.config import ModelConfig
from .sim import RadarConfig
from .tesseract import PreprocessConfig
from .train import OptimConfig

__all__ = ["RunConfig", "ConfigError", "load_run_config"]

SCALES = ("desk", "full")


class ConfigError(ValueError):
    """The run configuration violates its schema."""


@dataclass
class RunConfig:
    scale: str = "desk"
    data_dir: str = "data"
    output_dir: str = "out"
    num_pairs: int = 10
    dynamic_fraction: float = 0.5
    seed: int = 0
    noise_power: float = DEFAULT_TRAIN_NOISE
    epochs: int = 50
    batch_size: int = 2
    planeflow_steps: int = 200
    seg_threshold: float = 0.6
    optimizer: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    cfar: dict = field(default_factory=dict)
    base_dir: Optional[str] = None  # set by the loader, never read from the file

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ConfigError(f"scale must be one of {SCALES}, got {self.scale!r}")
        for name in ("num_pairs", "epochs", "batch_size", "seed", "planeflow_steps"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an integer")
        if self.num_pairs < 1 or self.epochs < 1 or self.batch_size < 1 or self.planeflow_steps < 0:
            raise ConfigError("num_pairs, epochs and batch_size must be positive")
        if not 0.0 <= self.dynamic_fraction <= 1.0:
            raise ConfigError("dynamic_fraction must lie in [0, 1]")
        if not 0.0 < self.seg_threshold < 1.0:
            raise ConfigError("seg_threshold must lie in (0, 1)")
        if not self.noise_power >= 0:
            raise ConfigError("noise_power must be non-negative")
        for name in ("optimizer", "model", "cfar"):
            if not isinstance(getattr(self, name), dict):
                raise ConfigError(f"{name} must be an object")
        # build every sub-config once so schema errors surface at load time
        self.optim_config()
        self.model_config()
        self.cfar_config()

    # -- resolved pieces ---------------------------------------------------------
    def _path(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.base_dir is not None:
            path = Path(self.base_dir) / path
        return path

    @property
    def data_path(self) -> Path:
        return self._path(self.data_dir)

    @property
    def output_path(self) -> Path:
        return self._path(self.output_dir)

    def radar_config(self) -> RadarConfig:
        preset = RadarConfig.desk if self.scale == "desk" else RadarConfig.full_scale
        return preset(noise_power=float(self.noise_power))

    def preprocess_config(self) -> PreprocessConfig:
        return PreprocessConfig.desk() if self.scale == "desk" else PreprocessConfig.full_scale()

    def model_config(self) -> ModelConfig:
        preset = ModelConfig.desk if self.scale == "desk" else ModelConfig.full_scale
        try:
            base = preset().to_dict()
            base["seed"] = self.seed
            base["num_doppler"] = self.radar_config().num_chirps
            unknown = set(self.model) - set(base)
            if unknown:
                raise ConfigError(f"unknown model keys: {sorted(unknown)}")
            base.update(self.model)
            return ModelConfig.from_dict(base)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from exc

    def optim_config(self) -> OptimConfig:
        return _build(OptimConfig, self.optimizer, "optimizer")

    def cfar_config(self) -> CfarConfig:
        return _build(CfarConfig, self.cfar, "cfar")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d


def _build(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def load_run_config(path) -> RunConfig:
    """Parse and validate a run configuration file.

    Raises FileNotFoundError if the file is missing and ConfigError for any
    schema violation (malformed JSON, unknown keys, wrong types or ranges).
    """
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError("the configuration must be a JSON object")
    known = {f.name for f in fields(RunConfig)} - {"base_dir"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        return RunConfig(**doc, base_dir=str(path.parent.resolve()))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
