"""Optimiser, learning-rate schedule and the self-supervised training loop."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .losses import (DEFAULT_ALPHA, DivergenceError, EnergyFeature, LossNormalizer, energy_features,
                     loss_ef, loss_rfs, loss_se, total_loss)
from .model.backbone import pad_to_multiple
from .model.network import PairInputs, RadarFlowNet, plane_pairs, prepare_pair
from .model.planeflow import PlaneFlowNet, plane_flow_loss
from .tesseract.build import Tesseract
from .tesseract.grid import GeometryVolumes

__all__ = ["OptimConfig", "Adam", "adam_step", "lr_schedule", "TrainSample", "make_sample",
           "pretrain_planeflow", "Trainer", "evaluate_losses",
           "shift_image"]


@dataclass
class OptimConfig:
    lr: float = 1e-3
    decay: float = 0.9
    decay_every: int = 2
    warmup_ratio: float = 0.2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0 or not 0 < self.decay <= 1 or self.decay_every < 1:
            raise ValueError("invalid learning-rate settings")
        if not 0 <= self.warmup_ratio < 1:
            raise ValueError("warm-up ratio must lie in [0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam constants")


def lr_schedule(step: int, epoch: int, total_steps: int, cfg: OptimConfig) -> float:
    """Linear warm-up to the epoch's decayed peak, then cosine decay to 0 at the last step."""
    peak = cfg.lr * cfg.decay ** (epoch // cfg.decay_every)
    warm = cfg.warmup_ratio * total_steps
    if step < warm:
        return peak * step / warm
    span = max(total_steps - 1 - warm, 1e-12)
    frac = min(max((step - warm) / span, 0.0), 1.0)
    return peak * 0.5 * (1.0 + math.cos(math.pi * frac))


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: dict, lr: float,
              cfg: OptimConfig = OptimConfig()) -> bool:
    """One in-place Adam update with bias-corrected moments.

    ``state`` holds ``t``, ``m`` and ``v``. Returns False (and changes
    nothing) when any gradient is non-finite.
    """
    if any(not np.all(np.isfinite(g)) for g in grads):
        state["skipped"] = state.get("skipped", 0) + 1
        return False
    if "m" not in state:
        state["t"] = 0
        state["m"] = [np.zeros_like(p) for p in params]
        state["v"] = [np.zeros_like(p) for p in params]
    state["t"] += 1
    t = state["t"]
    b1, b2 = cfg.beta1, cfg.beta2
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return True


class Adam:
    """Adam over autodiff parameters; missing gradients count as zero."""

    def __init__(self, params: Sequence, cfg: OptimConfig = OptimConfig()):
        self.params = list(params)
        self.cfg = cfg
        self.state: dict = {}

    @property
    def skipped(self) -> int:
        return self.state.get("skipped", 0)

    def step(self, lr: float) -> bool:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        return adam_step([p.data for p in self.params], grads, self.state, lr, self.cfg)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------- plane-flow pretraining


def shift_image(img: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Move image content by (dy, dx) pixels, filling uncovered pixels with zeros."""
    out = np.zeros_like(img)
    H, W = img.shape
    ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
    xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
    out[yd, xd] = img[ys, xs]
    return out


def pretrain_planeflow(net: PlaneFlowNet, tesseracts: Sequence[Tesseract], steps: int = 200,
                       lr: float = 3e-3, seed: int = 0, max_shift: int = 2,
                       identity_fraction: float = 0.25, magnitude_weight: float = 1e-3,
                       log: Optional[Callable[[dict], None]] = None) -> List[float]:
    """Fit the plane-flow module with the 2-D energy-flow loss on shifted projections.

    Every step draws fresh integer shifts for one plane of one tesseract; a
    fraction ``identity_fraction`` of the steps uses the unshifted plane, so
    static input is seen often. The returned list holds the per-step losses.
    """
    rng = np.random.default_rng([seed, 0x9F])
    opt = Adam(net.parameters(), OptimConfig(lr=lr))
    losses = []
    for step in range(steps):
        t = tesseracts[int(rng.integers(len(tesseracts)))]
        padded, _ = pad_to_multiple(t.power)
        planes = plane_pairs(padded, padded)
        img = planes[int(rng.integers(3))][0]
        dy, dx = (int(v) for v in rng.integers(-max_shift, max_shift + 1, size=2))
        if rng.random() < identity_fraction:
            dy = dx = 0
        tgt = shift_image(img, dy, dx)
        opt.zero_grad()
        loss = plane_flow_loss(net(img, tgt), img, tgt, magnitude_weight)
        ad.backward(loss)
        opt.step(lr * 0.5 * (1 + math.cos(math.pi * step / max(steps, 1))))
        losses.append(float(loss.data))
        if log is not None:
            log({"stage": "planeflow", "step": step, "loss": losses[-1]})
    opt.zero_grad()
    return losses


# ---------------------------------------------------------------- main training


@dataclass
class TrainSample:
    inputs: PairInputs
    energy_src: EnergyFeature
    energy_tgt: EnergyFeature
    geometry: GeometryVolumes
    dt: float
    beta: float


def make_sample(net: RadarFlowNet, src: Tesseract, tgt: Tesseract) -> TrainSample:
    inputs = prepare_pair(src, tgt, net.planeflow, net.cfg)
    seed = net.cfg.seed
    return TrainSample(
        inputs=inputs,
        energy_src=energy_features(src.power, src.frame_id, seed, net.cfg.gumbel_temperature),
        energy_tgt=energy_features(tgt.power, tgt.frame_id, seed, net.cfg.gumbel_temperature),
        geometry=GeometryVolumes.from_grid(src.grid),
        dt=src.grid.dt,
        beta=src.grid.doppler_step ** 2,
    )


def sample_terms(net: RadarFlowNet, s: TrainSample, alpha: float = DEFAULT_ALPHA) -> dict:
    out = net(s.inputs)
    return {
        "se": loss_se(out.seg, out.flow, s.energy_src, s.energy_tgt),
        "ef": loss_ef(s.energy_src.energy, s.energy_tgt.energy, out.flow),
        "rfs": loss_rfs(out.seg, out.flow, s.inputs.velocity_s, s.geometry, s.dt, alpha, s.beta),
    }


def evaluate_losses(net: RadarFlowNet, samples: Sequence[TrainSample]) -> dict:
    """Mean raw loss terms over ``samples`` without recording gradients."""
    acc = {"se": 0.0, "ef": 0.0, "rfs": 0.0}
    with ad.no_grad():
        for s in samples:
            for k, v in sample_terms(net, s).items():
                acc[k] += float(v.data)
    out = {k: v / len(samples) for k, v in acc.items()}
    out["total"] = out["se"] + out["ef"] + out["rfs"]
    return out


@dataclass
class Trainer:
    net: RadarFlowNet
    samples: List[TrainSample]
    optim: OptimConfig = field(default_factory=OptimConfig)
    batch_size: int = 2
    seed: int = 0
    normalizer: LossNormalizer = field(default_factory=LossNormalizer)
    log: Optional[Callable[[dict], None]] = None

    def __post_init__(self):
        self.opt = Adam(self.net.trainable_parameters(), self.optim)
        self.step = 0

    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.samples) / self.batch_size)

    def train(self, epochs: int) -> List[dict]:
        total_steps = epochs * self.steps_per_epoch()
        rng = np.random.default_rng([self.seed, 0x7A1])
        history = []
        for epoch in range(epochs):
            order = rng.permutation(len(self.samples))
            for b in range(self.steps_per_epoch()):
                batch = [self.samples[i] for i in order[b * self.batch_size:(b + 1) * self.batch_size]]
                history.append(self._step(batch, epoch, total_steps))
        return history

    def _step(self, batch, epoch: int, total_steps: int) -> dict:
        t0 = time.perf_counter()
        self.opt.zero_grad()
        self.net.planeflow.zero_grad()
        terms = None
        for s in batch:
            st = sample_terms(self.net, s)
            terms = st if terms is None else {k: terms[k] + st[k] for k in st}
        terms = {k: v * (1.0 / len(batch)) for k, v in terms.items()}
        lr = lr_schedule(self.step, epoch, total_steps, self.optim)
        try:
            total, report = total_loss(terms, self.normalizer)
        except DivergenceError:
            self.opt.state["skipped"] = self.opt.state.get("skipped", 0) + 1
            rec = {"step": self.step, "epoch": epoch, "lr": lr, "diverged": True}
        else:
            ad.backward(total)
            applied = self.opt.step(lr)
            rec = {"step": self.step, "epoch": epoch, "lr": lr,
                   "loss_se": report.raw["se"], "loss_ef": report.raw["ef"],
                   "loss_rfs": report.raw["rfs"], "raw_total": report.raw_total,
                   "total": report.total, "applied": applied}
        rec["seconds"] = round(time.perf_counter() - t0, 3)
        self.step += 1
        if self.log is not None:
            self.log(rec)
        return rec

    def parameters_finite(self) -> bool:
        return all(np.all(np.isfinite(p.data)) for p in self.net.parameters())


def jsonl_logger(path) -> Callable[[dict], None]:
    """Append one JSON document per call; timing fields are dropped for reproducibility."""
    fh = open(path, "w")

    def write(rec: dict) -> None:
        clean = {k: v for k, v in rec.items() if k != "seconds"}
        fh.write(json.dumps(clean, sort_keys=True) + "\n")
        fh.flush()

    write.close = fh.close  # type: ignore[attr-defined]
    return write


__all__ += ["jsonl_logger", "sample_terms"]
