"""FMCW radar configuration and the desk / full-scale presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

__all__ = ["SPEED_OF_LIGHT", "RadarConfig"]

SPEED_OF_LIGHT = 299_792_458.0


def _uniform_line(n: int, spacing: float, axis: int) -> np.ndarray:
    pos = np.zeros((n, 3))
    pos[:, axis] = spacing * (np.arange(n) - (n - 1) / 2.0)
    return pos


@dataclass
class RadarConfig:
    """MIMO FMCW radar with transmitters stacked in elevation and receivers in azimuth.

    The virtual array is the sum of every (tx, rx) position pair, ordered
    tx-major, so the channel axis reshapes to (num_tx, num_rx) = (E_raw, A_raw).
    """

    carrier_frequency: float = 77e9
    bandwidth: float = 149.896229e6
    chirp_duration: float = 100e-6
    num_chirps: int = 16
    num_samples: int = 64
    tx_positions: np.ndarray = field(default=None)
    rx_positions: np.ndarray = field(default=None)
    frame_interval: float = 0.2
    noise_power: float = 1e-4

    def __post_init__(self):
        lam = self.wavelength
        if self.tx_positions is None:
            self.tx_positions = _uniform_line(10, lam, axis=2)
        if self.rx_positions is None:
            self.rx_positions = _uniform_line(28, lam, axis=1)
        self.tx_positions = np.asarray(self.tx_positions, dtype=float).reshape(-1, 3)
        self.rx_positions = np.asarray(self.rx_positions, dtype=float).reshape(-1, 3)
        if self.bandwidth <= 0 or self.chirp_duration <= 0 or self.carrier_frequency <= 0:
            raise ValueError("bandwidth, chirp duration and carrier must be positive")
        if self.num_chirps < 1 or self.num_samples < 1:
            raise ValueError("chirp and sample counts must be positive")
        if self.frame_interval <= 0 or self.noise_power < 0:
            raise ValueError("frame interval must be positive and noise power non-negative")

    # -- derived quantities ---------------------------------------------------
    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    @property
    def range_resolution(self) -> float:
        return SPEED_OF_LIGHT / (2.0 * self.bandwidth)

    @property
    def max_range(self) -> float:
        return self.range_resolution * self.num_samples

    @property
    def max_velocity(self) -> float:
        return self.wavelength / (4.0 * self.chirp_duration)

    @property
    def velocity_resolution(self) -> float:
        return self.wavelength / (2.0 * self.num_chirps * self.chirp_duration)

    @property
    def num_tx(self) -> int:
        return len(self.tx_positions)

    @property
    def num_rx(self) -> int:
        return len(self.rx_positions)

    @property
    def num_channels(self) -> int:
        return self.num_tx * self.num_rx

    @property
    def az_raw(self) -> int:
        return self.num_rx

    @property
    def el_raw(self) -> int:
        return self.num_tx

    def virtual_positions(self) -> np.ndarray:
        """(num_tx * num_rx, 3) virtual element positions, tx-major."""
        return (self.tx_positions[:, None, :] + self.rx_positions[None, :, :]).reshape(-1, 3)

    def element_spacing(self) -> tuple:
        """(azimuth, elevation) spacing of the virtual array in meters."""
        def step(p, axis):
            return float(p[1, axis] - p[0, axis]) if len(p) > 1 else self.wavelength
        return step(self.rx_positions, 1), step(self.tx_positions, 2)

    # -- presets ---------------------------------------------------------------
    @classmethod
    def desk(cls, **overrides) -> "RadarConfig":
        """16 chirps x 64 samples x (10 x 28) channels, 1 m range bins."""
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides) -> "RadarConfig":
        """64 chirps x 256 samples x (37 x 107) channels, 0.46 m range bins."""
        base = dict(bandwidth=SPEED_OF_LIGHT / (2 * 0.46), num_chirps=64, num_samples=256,
                    chirp_duration=50e-6, frame_interval=0.1)
        base.update(overrides)
        lam = SPEED_OF_LIGHT / base.get("carrier_frequency", 77e9)
        base.setdefault("tx_positions", _uniform_line(37, lam / 2, axis=2))
        base.setdefault("rx_positions", _uniform_line(107, lam / 2, axis=1))
        return cls(**base)

    # -- serialisation ----------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["tx_positions"] = self.tx_positions.tolist()
        d["rx_positions"] = self.rx_positions.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RadarConfig":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
