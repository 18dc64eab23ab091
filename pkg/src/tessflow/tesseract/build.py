"""FFT chain from ADC cube to power tesseract, preprocessing crop and plane projections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..sim.adc import AdcCube
from ..sim.config import RadarConfig
from .grid import ANGLE_SINE, PolarGrid

__all__ = [
    "Tesseract", "PreprocessConfig", "raw_grid", "build_tesseract", "preprocess",
    "preprocess_grid", "project_planes", "parseval_scale", "analytic_bins",
]


@dataclass
class Tesseract:
    power: np.ndarray  # (D, R, A, E), non-negative
    grid: PolarGrid
    frame_id: int = 0

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=np.float64)
        if self.power.shape != self.grid.shape:
            raise ValueError(f"power extents {self.power.shape} do not match grid {self.grid.shape}")


@dataclass(frozen=True)
class PreprocessConfig:
    """Target azimuth / elevation extents after clipping (range is always halved)."""

    az_out: int = 12
    el_out: int = 8

    @classmethod
    def desk(cls) -> "PreprocessConfig":
        return cls(12, 8)

    @classmethod
    def full_scale(cls) -> "PreprocessConfig":
        return cls(48, 32)


def raw_grid(cfg: RadarConfig, frame_interval: Optional[float] = None) -> PolarGrid:
    """Grid of the un-cropped tesseract; angle bins are uniform in direction cosine."""
    d_az, d_el = cfg.element_spacing()
    lam = cfg.wavelength
    na, ne, nd = cfg.az_raw, cfg.el_raw, cfg.num_chirps
    dv = cfg.velocity_resolution
    return PolarGrid(
        range_min=0.0, range_step=cfg.range_resolution, num_range=cfg.num_samples,
        az_start=-(na // 2) * lam / (na * d_az), az_step=lam / (na * d_az), num_az=na,
        el_start=-(ne // 2) * lam / (ne * d_el), el_step=lam / (ne * d_el), num_el=ne,
        doppler_start=-(nd // 2) * dv, doppler_step=dv, num_doppler=nd,
        dt=cfg.frame_interval if frame_interval is None else frame_interval,
        angle_mode=ANGLE_SINE)


def parseval_scale(cfg: RadarConfig) -> float:
    """sum(power) / sum(|adc|^2) for unnormalised FFTs over all four axes."""
    return float(cfg.num_samples * cfg.num_chirps * cfg.az_raw * cfg.el_raw)


def build_tesseract(adc: AdcCube, cfg: RadarConfig, frame_id: int = 0) -> Tesseract:
    """Range, Doppler, azimuth and elevation FFTs followed by squared magnitude."""
    data = adc.data
    n_ch, n_c, n_s = data.shape
    if (n_c, n_s) != (cfg.num_chirps, cfg.num_samples):
        raise ValueError(f"ADC extents {data.shape} do not match the radar configuration")
    if n_ch != cfg.az_raw * cfg.el_raw:
        raise ValueError(f"{n_ch} channels do not factor into {cfg.el_raw} x {cfg.az_raw}")
    x = np.fft.fft(data, axis=2)                                   # range
    x = np.fft.fftshift(np.fft.fft(x, axis=1), axes=1)             # Doppler
    x = x.reshape(cfg.el_raw, cfg.az_raw, n_c, n_s)
    x = np.fft.fftshift(np.fft.fft(x, axis=1), axes=1)             # azimuth
    x = np.fft.fftshift(np.fft.fft(x, axis=0), axes=0)             # elevation
    power = np.transpose(np.abs(x) ** 2, (2, 3, 1, 0))             # (D, R, A, E)
    return Tesseract(power, raw_grid(cfg), frame_id)


def analytic_bins(cfg: RadarConfig, position, radial_velocity: float) -> np.ndarray:
    """Continuous (d, r, a, e) location of a point scatterer in the raw tesseract."""
    grid = raw_grid(cfg)
    idx = grid.cartesian_to_index(np.asarray(position, dtype=float))
    d = (radial_velocity - grid.doppler_start) / grid.doppler_step
    return np.array([d, idx[0], idx[1], idx[2]])


def _clip_start(n: int, m: int) -> int:
    return (n - m) // 2


def preprocess_grid(grid: PolarGrid, pcfg: PreprocessConfig = PreprocessConfig()) -> PolarGrid:
    sa = _clip_start(grid.num_az, 2 * pcfg.az_out)
    se = _clip_start(grid.num_el, pcfg.el_out)
    return grid.with_updates(
        num_range=grid.num_range // 2,
        az_start=grid.az_start + (sa + 0.5) * grid.az_step, az_step=2 * grid.az_step,
        num_az=pcfg.az_out,
        el_start=grid.el_start + se * grid.el_step, num_el=pcfg.el_out)


def preprocess(t: Tesseract, pcfg: PreprocessConfig = PreprocessConfig()) -> Tesseract:
    """Keep the first half of range, clip azimuth to 2*az_out then average pairs, clip elevation."""
    D, R, A, E = t.power.shape
    if A < 2 * pcfg.az_out or E < pcfg.el_out or R < 2:
        raise ValueError(f"raw extents {t.power.shape} smaller than target "
                         f"(R/2, {pcfg.az_out}, {pcfg.el_out})")
    sa = _clip_start(A, 2 * pcfg.az_out)
    se = _clip_start(E, pcfg.el_out)
    p = t.power[:, : R // 2, sa: sa + 2 * pcfg.az_out, se: se + pcfg.el_out]
    p = 0.5 * (p[:, :, 0::2] + p[:, :, 1::2])
    return Tesseract(np.ascontiguousarray(p), preprocess_grid(t.grid, pcfg), t.frame_id)


def project_planes(t) -> tuple:
    """(RA, RE, AE) max-projections; Doppler is always collapsed."""
    p = t.power if isinstance(t, Tesseract) else np.asarray(t)
    vol = p.max(axis=0)
    return vol.max(axis=2), vol.max(axis=1), vol.max(axis=0)
