"""Doppler channel encoding: a per-voxel MLP over the Doppler power vector plus
two velocity read-outs (soft expectation and hard Gumbel sample)."""

from __future__ import annotations

import zlib

import numpy as np

from .. import autodiff as ad
from ..autodiff.nn import Module, PointwiseMLP
from .config import ModelConfig

__all__ = ["DopplerEncoder", "doppler_logits", "normalized_log_power", "velocity_readout",
           "frame_seed"]


def frame_seed(seed: int, frame_id: int, salt: str = "gumbel") -> int:
    """Deterministic per-frame seed for the Gumbel noise."""
    return zlib.crc32(f"{salt}:{int(seed)}:{int(frame_id)}".encode())


def normalized_log_power(power: np.ndarray) -> np.ndarray:
    """log10(P / p99 + 1e-4) + 4: scale-free input in roughly [0, 6]."""
    ref = np.percentile(power, 99)
    ref = ref if ref > 0 else 1.0
    return np.log10(power / ref + 1e-4) + 4.0


def doppler_logits(power: np.ndarray, scale: float = 1.0, eps: float = 1e-8) -> np.ndarray:
    """Logits ``scale * ln(P + eps * max P)``.

    With ``scale = 1`` the softmax along Doppler is the normalised power
    spectrum, so the soft velocity is the power-weighted Doppler centroid.
    The model uses ``scale = 2`` (squared-power weights): the sinc sidelobes
    of the untapered Doppler FFT then barely pull the centroid toward zero.
    """
    ref = float(np.max(power))
    ref = ref if ref > 0 else 1.0
    return scale * np.log(power / ref + eps)


def velocity_readout(power: np.ndarray, doppler_axis: np.ndarray, cfg: ModelConfig,
                     seed: int) -> tuple:
    """(F_v1, F_v2) velocity maps (R, A, E) from a (D, R, A, E) power tesseract."""
    logits = doppler_logits(power, cfg.doppler_logit_scale, cfg.doppler_eps)
    ax = np.asarray(doppler_axis, dtype=float).reshape(-1, 1, 1, 1)
    soft = ad.softmax(logits, axis=0).data
    hard = ad.gumbel_softmax(logits, axis=0, temperature=cfg.gumbel_temperature, hard=True,
                             seed=seed).data
    return (ax * soft).sum(axis=0), (ax * hard).sum(axis=0)


class DopplerEncoder(Module):
    """Maps a (D, R, A, E) tesseract to the (C_d + 2, R, A, E) Doppler-aware feature."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        D, cd = cfg.num_doppler, cfg.doppler_channels
        self.mlp = PointwiseMLP([D, 2 * cd, cd], rng)

    def forward(self, power: np.ndarray, doppler_axis: np.ndarray, frame_id: int = 0):
        if power.shape[0] != self.cfg.num_doppler:
            raise ValueError(f"expected {self.cfg.num_doppler} Doppler bins, got {power.shape[0]}")
        enc = self.mlp(ad.Tensor(normalized_log_power(power)))
        v1, v2 = velocity_readout(power, doppler_axis, self.cfg,
                                  frame_seed(self.cfg.seed, frame_id))
        return ad.concat([enc, ad.Tensor(np.stack([v1, v2]))], axis=0)
