"""Self-supervised training objectives on the polar bin grid.

Three terms drive training without labels:

* segmentation energy: the predicted confidence should follow the sigmoid of
  echo energy above the local noise level, in the source frame and, after
  warping by the predicted flow, in the target frame;
* energy flow: warping the target energy by the predicted flow should
  reproduce the source energy wherever the source is bright;
* radial flow consistency: a target's flow projected on its line of sight,
  divided by the frame interval, should equal its measured Doppler velocity.

Each residual is reduced with an L1 norm and a voxel mean; the combined
objective divides every term by a running average of its own magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter

from . import autodiff as ad
from .autodiff.sampling import identity_grid, warp
from .model.doppler import doppler_logits, frame_seed
from .tesseract.grid import GeometryVolumes

__all__ = [
    "EnergyFeature", "energy_features", "loss_se", "loss_ef", "loss_rfs", "interior_mask",
    "LossNormalizer", "LossReport", "DivergenceError", "total_loss", "TAU_WINDOW",
    "DEFAULT_ALPHA",
]

TAU_WINDOW = (5, 5, 3)
DEFAULT_ALPHA = 4.0


class DivergenceError(FloatingPointError):
    """A loss term became non-finite; the optimisation step must be aborted."""


@dataclass
class EnergyFeature:
    energy: np.ndarray   # E_f (R, A, E)
    noise: np.ndarray    # tau_f (R, A, E)

    def target(self) -> np.ndarray:
        """sigmoid(E_f - tau_f), the soft occupancy implied by the energy."""
        return 1.0 / (1.0 + np.exp(-(self.energy - self.noise)))


def _p99_normalise(x: np.ndarray) -> np.ndarray:
    ref = np.percentile(x, 99)
    return x / (ref if ref > 0 else 1.0)


def energy_features(power: np.ndarray, frame_id: int = 0, seed: int = 0,
                    temperature: float = 1.0) -> EnergyFeature:
    """Energy E_f and noise level tau_f of a (D, R, A, E) power tesseract.

    E_max reads the power at a hard Gumbel sample of the Doppler spectrum
    (logits are log power, so the sample follows the spectrum's shape), E_mean
    averages over Doppler; each is divided by its own 99th percentile before
    the two are averaged.
    """
    power = np.asarray(power, dtype=float)
    logits = doppler_logits(power)
    onehot = ad.gumbel_softmax(logits, axis=0, temperature=temperature, hard=True,
                               seed=frame_seed(seed, frame_id, "energy")).data
    e_max = np.sum(power * onehot, axis=0)
    e_mean = power.mean(axis=0)
    e_f = 0.5 * (_p99_normalise(e_max) + _p99_normalise(e_mean))
    local = uniform_filter(e_f, size=TAU_WINDOW, mode="nearest")
    per_range = e_f.mean(axis=(1, 2), keepdims=True)
    tau = 0.5 * (local + per_range)
    return EnergyFeature(e_f, tau)


def interior_mask(flow: np.ndarray) -> np.ndarray:
    """Voxels whose warp sample point lies inside the grid on every axis (no clamping)."""
    flow = np.asarray(flow)
    coords = identity_grid(flow.shape[1:]) + flow
    ok = np.ones(flow.shape[1:], dtype=bool)
    for axis, n in enumerate(flow.shape[1:]):
        ok &= (coords[axis] >= 0) & (coords[axis] <= n - 1)
    return ok


def _masked_mean(x, mask: Optional[np.ndarray]):
    if mask is None:
        return ad.mean(x)
    count = max(int(mask.sum()), 1)
    return ad.sum(x * mask.astype(float)) * (1.0 / count)


def loss_se(seg, flow, src: EnergyFeature, tgt: EnergyFeature):
    """mean|M - s_S| + mean|M * (warp(M, flow) - s_T)| with s = sigmoid(E_f - tau_f)."""
    seg, flow = ad.as_tensor(seg), ad.as_tensor(flow)
    if seg.shape != src.energy.shape or seg.shape != tgt.energy.shape:
        raise ValueError("segmentation and energy extents differ")
    r1 = seg - src.target()
    r2 = seg * (warp(seg, flow) - tgt.target())
    return ad.mean(ad.abs(r1)) + ad.mean(ad.abs(r2))


def loss_ef(e_src: np.ndarray, e_tgt: np.ndarray, flow, interior: bool = False):
    """mean(E_S * |E_S - warp(E_T, flow)|), optionally over unclamped voxels only."""
    flow = ad.as_tensor(flow)
    e_src = np.asarray(e_src, dtype=float)
    if e_src.shape != np.shape(e_tgt) or flow.shape[1:] != e_src.shape:
        raise ValueError("energy and flow extents differ")
    term = e_src * ad.abs(e_src - warp(e_tgt, flow))
    return _masked_mean(term, interior_mask(flow.data) if interior else None)


def radial_velocity(flow, geometry: GeometryVolumes, dt: float):
    """Line-of-sight velocity implied by a bin flow: <(warp(C, flow) - C) / dt, O>."""
    flow = ad.as_tensor(flow)
    disp = warp(geometry.cartesian, flow) - geometry.cartesian
    return ad.sum(disp * geometry.direction, axis=0) * (1.0 / dt)


def loss_rfs(seg, flow, velocity: np.ndarray, geometry: GeometryVolumes, dt: float,
             alpha: float = DEFAULT_ALPHA, beta: float = 1.0):
    """mean|M - sigmoid(alpha * (beta - delta^2))|, delta = F_v - radial_velocity(flow)."""
    if not dt > 0:
        raise ValueError(f"frame interval must be positive, got {dt}")
    if not (alpha > 0 and beta > 0):
        raise ValueError("alpha and beta must be positive")
    seg = ad.as_tensor(seg)
    delta = ad.as_tensor(velocity) - radial_velocity(flow, geometry, dt)
    target = ad.sigmoid((beta - ad.square(delta)) * alpha)
    return ad.mean(ad.abs(seg - target))


@dataclass
class LossNormalizer:
    """Per-term exponential moving average of magnitudes.

    The average starts at the first observed value and follows
    ``ema <- decay * ema + (1 - decay) * value``; during the first ``warmup``
    steps the divisor stays 1 while the average keeps updating.
    """

    decay: float = 0.99
    warmup: int = 10
    ema: dict = field(default_factory=dict)
    steps: int = 0

    def divisors(self) -> dict:
        if self.steps < self.warmup:
            return {k: 1.0 for k in self.ema}
        return {k: (v if v > 0 else 1.0) for k, v in self.ema.items()}

    def weights_for(self, names) -> dict:
        div = self.divisors()
        return {n: 1.0 / div.get(n, 1.0) for n in names}

    def update(self, values: dict) -> None:
        for k, v in values.items():
            v = float(v)
            self.ema[k] = v if k not in self.ema else self.decay * self.ema[k] + (1 - self.decay) * v
        self.steps += 1

    def to_dict(self) -> dict:
        return {"decay": self.decay, "warmup": self.warmup, "ema": dict(self.ema),
                "steps": self.steps}


@dataclass
class LossReport:
    raw: dict
    weights: dict
    total: float

    @property
    def raw_total(self) -> float:
        return float(sum(self.raw.values()))


def total_loss(terms: dict, normalizer: Optional[LossNormalizer] = None, update: bool = True):
    """Sum of normalised terms; returns (scalar tensor, LossReport).

    Raises DivergenceError if any term is non-finite, before touching the EMA.
    """
    raw = {k: float(ad.as_tensor(v).data) for k, v in terms.items()}
    bad = [k for k, v in raw.items() if not np.isfinite(v)]
    if bad:
        raise DivergenceError(f"non-finite loss terms: {bad}")
    weights = normalizer.weights_for(terms) if normalizer is not None else {k: 1.0 for k in terms}
    total = None
    for k, v in terms.items():
        t = ad.as_tensor(v) * weights[k]
        total = t if total is None else total + t
    if normalizer is not None and update:
        normalizer.update(raw)
    return total, LossReport(raw, weights, float(total.data))
