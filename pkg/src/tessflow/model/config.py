"""Hyper-parameters of the perception network."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Tuple


@dataclass
class ModelConfig:
    num_doppler: int = 16
    pyramid_channels: Tuple[int, int, int] = (16, 32, 64)
    corr_channels: int = 32          # C_c
    patch_channels: int = 256        # C_p, so C_p / 64 = 4 output channels
    unified_channels: int = 5        # C_g = C_p / 64 + 1
    heads: int = 3                   # M
    points: int = 8                  # K
    levels: int = 3                  # L
    head_dim: int = 0                # 0 -> ceil(C_c / M)
    patch: int = 4
    patch_heads: int = 2
    slice_heads: int = 2
    encoder_layers: int = 2
    decode_hidden: int = 32
    plane_channels: Tuple[int, int, int] = (8, 16, 16)
    plane_radius: int = 3
    gumbel_temperature: float = 1.0
    doppler_logit_scale: float = 2.0   # softmax(2 ln P): squared-power weighting
    doppler_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        self.pyramid_channels = tuple(int(c) for c in self.pyramid_channels)
        self.plane_channels = tuple(int(c) for c in self.plane_channels)
        for name in ("num_doppler", "corr_channels", "patch_channels", "unified_channels", "heads",
                     "points", "patch", "patch_heads", "slice_heads", "encoder_layers",
                     "decode_hidden", "plane_radius"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.head_dim < 0:
            raise ValueError("head_dim must be non-negative")
        if self.doppler_logit_scale <= 0 or self.doppler_eps <= 0:
            raise ValueError("Doppler readout scale and epsilon must be positive")
        if self.num_doppler % 8:
            raise ValueError(f"Doppler extent {self.num_doppler} is not divisible by 8")
        if self.levels != 3 or len(self.pyramid_channels) != 3:
            raise ValueError("the feature pyramid has exactly three levels")
        if self.patch_channels % self.patch ** 3:
            raise ValueError("patch channels must be a multiple of the patch volume")
        if self.unified_channels != self.patch_channels // self.patch ** 3 + 1:
            raise ValueError("unified channels must equal C_p / patch^3 + 1")
        if self.gumbel_temperature <= 0:
            raise ValueError("gumbel temperature must be positive")

    @property
    def doppler_channels(self) -> int:
        return self.num_doppler // 8

    @property
    def value_dim(self) -> int:
        return self.head_dim or math.ceil(self.corr_channels / self.heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pyramid_channels"] = list(self.pyramid_channels)
        d["plane_channels"] = list(self.plane_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def desk(cls, **kw) -> "ModelConfig":
        return cls(**kw)

    @classmethod
    def full_scale(cls, **kw) -> "ModelConfig":
        base = dict(num_doppler=64, points=50)
        base.update(kw)
        return cls(**base)

