"""Raw ADC cube synthesis for a MIMO FMCW radar and its binary file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..formats import FormatError, read_header, write_header
from .config import RadarConfig
from .scene import SceneSpec

__all__ = ["AdcCube", "simulate_adc", "write_adc", "read_adc", "ADC_MAGIC", "ADC_VERSION"]

ADC_MAGIC = b"ADCCUBE\x00"
ADC_VERSION = 1


class WindowError(ValueError):
    """A scatterer lies outside the unambiguous range/velocity window."""


@dataclass
class AdcCube:
    """Complex samples indexed ``[channel, chirp, sample]``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ValueError("ADC cube must be 3-D (channel, chirp, sample)")

    @property
    def shape(self) -> tuple:
        return self.data.shape


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, int(frame) & 0xFFFFFFFF, 0xADC])


def simulate_adc(scene: SceneSpec, cfg: RadarConfig, frame: int = None) -> AdcCube:
    """Sum of per-scatterer complex exponentials plus circular Gaussian noise.

    For a scatterer at range r with radial velocity v and unit direction u,
    sample (channel k, chirp m, sample n) carries the phase

        2 pi (r / dr) n / N  +  4 pi r / lambda  +  4 pi v Tc m / lambda
        +  2 pi (p_k . u) / lambda

    where p_k is the virtual element position. The fast-time term places the
    scatterer exactly at range bin r / dr after an N-point FFT.
    """
    frame = scene.frame if frame is None else frame
    lam = cfg.wavelength
    pos, vel, amp = scene.radiating()
    n_ch, n_c, n_s = cfg.num_channels, cfg.num_chirps, cfg.num_samples
    cube = np.zeros((n_ch, n_c, n_s), dtype=np.complex128)
    if len(pos):
        rng_m = np.linalg.norm(pos, axis=1)
        if np.any(rng_m <= 0) or np.any(rng_m >= cfg.max_range):
            raise WindowError(f"scatterer range outside (0, {cfg.max_range:.3f}) m")
        u = pos / rng_m[:, None]
        v_r = np.einsum("ij,ij->i", vel, u)
        if np.any(np.abs(v_r) >= cfg.max_velocity):
            raise WindowError(f"radial velocity outside +-{cfg.max_velocity:.3f} m/s")
        n = np.arange(n_s)
        m = np.arange(n_c)
        virt = cfg.virtual_positions()
        fast = 2 * np.pi * np.outer(rng_m / cfg.range_resolution, n) / n_s      # (P, N)
        slow = 4 * np.pi * cfg.chirp_duration * np.outer(v_r, m) / lam          # (P, M)
        chan = 2 * np.pi * (u @ virt.T) / lam                                   # (P, K)
        carrier = 4 * np.pi * rng_m / lam                                       # (P,)
        a = (amp * np.exp(1j * carrier))[:, None] * np.exp(1j * chan)           # (P, K)
        b = np.exp(1j * slow)
        c = np.exp(1j * fast)
        cube = np.einsum("pk,pm,pn->kmn", a, b, c, optimize=True)
    if cfg.noise_power > 0:
        rng = frame_rng(scene.seed, frame)
        scale = np.sqrt(cfg.noise_power / 2.0)
        cube = cube + scale * (rng.standard_normal(cube.shape) + 1j * rng.standard_normal(cube.shape))
    return AdcCube(cube)


def write_adc(path, cube: AdcCube) -> None:
    data = cube.data
    inter = np.empty(data.shape + (2,), dtype="<f4")
    inter[..., 0] = data.real
    inter[..., 1] = data.imag
    with open(path, "wb") as fh:
        write_header(fh, ADC_MAGIC, ADC_VERSION)
        fh.write(struct.pack("<3I", *data.shape))
        fh.write(inter.tobytes())


def read_adc(path) -> AdcCube:
    raw = Path(path).read_bytes()
    off = read_header(raw, ADC_MAGIC, ADC_VERSION)
    if len(raw) < off + 12:
        raise FormatError("truncated ADC extents")
    shape = struct.unpack_from("<3I", raw, off)
    off += 12
    count = int(np.prod(shape)) * 2
    if len(raw) != off + 4 * count:
        raise FormatError(f"ADC payload has {len(raw) - off} bytes, expected {4 * count}")
    inter = np.frombuffer(raw, dtype="<f4", count=count, offset=off).reshape(tuple(shape) + (2,))
    return AdcCube(inter[..., 0].astype(np.float64) + 1j * inter[..., 1].astype(np.float64))
