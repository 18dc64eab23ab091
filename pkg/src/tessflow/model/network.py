"""The complete perception network and the per-pair input preparation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff.nn import Module, PointwiseMLP
from ..tesseract.build import Tesseract, project_planes
from ..tesseract.grid import GeometryVolumes
from .backbone import FPN, Backbone, pad_to_multiple
from .config import ModelConfig
from .deform import MSDeformAttn
from .doppler import DopplerEncoder, frame_seed, velocity_readout
from .globalattn import PatchAttention, SliceAttention
from .planeflow import PlaneFlowNet, plane_energy
from .refpoints import reference_points

__all__ = ["PairInputs", "PerceptionOutput", "Decoder", "RadarFlowNet", "prepare_pair",
           "plane_pairs"]


@dataclass
class PairInputs:
    """Everything the network consumes for one (source, target) pair, padded to multiples of 4."""

    power_s: np.ndarray          # (D, R', A', E')
    power_t: np.ndarray
    doppler_axis: np.ndarray     # (D,)
    frame_s: int
    frame_t: int
    refs: List[np.ndarray]       # per level (3, R'/2^l, A'/2^l, E'/2^l)
    polar: np.ndarray            # (3, R', A', E')
    direction: np.ndarray        # (3, R', A', E')
    spatial: tuple               # original (R, A, E)
    velocity_s: np.ndarray       # F_v1 of the source, (R, A, E)


@dataclass
class PerceptionOutput:
    seg: "ad.Tensor"    # (R, A, E) in [0, 1]
    flow: "ad.Tensor"   # (3, R, A, E) bins


def plane_pairs(power_s: np.ndarray, power_t: np.ndarray) -> list:
    """[(src, tgt)] energy images for the RA, RE and AE planes."""
    ps, pt = project_planes(power_s), project_planes(power_t)
    return [(plane_energy(a), plane_energy(b)) for a, b in zip(ps, pt)]


def prepare_pair(src: Tesseract, tgt: Tesseract, planeflow: PlaneFlowNet,
                 cfg: ModelConfig) -> PairInputs:
    """Pad, run the frozen plane-flow module and build the reference points."""
    if src.power.shape != tgt.power.shape:
        raise ValueError("source and target tesseracts differ in extents")
    ps, spatial = pad_to_multiple(src.power)
    pt, _ = pad_to_multiple(tgt.power)
    with ad.no_grad():
        flows = [planeflow(a, b) for a, b in plane_pairs(ps, pt)]
    ra, re, ae = ([f.data for f in plane] for plane in flows)
    refs = reference_points(ra, re, ae)
    padded_grid = src.grid.with_updates(num_range=ps.shape[1], num_az=ps.shape[2],
                                        num_el=ps.shape[3])
    geo = GeometryVolumes.from_grid(padded_grid)
    v1, _ = velocity_readout(src.power, src.grid.doppler_axis(), cfg,
                             frame_seed(cfg.seed, src.frame_id))
    return PairInputs(ps, pt, src.grid.doppler_axis(), src.frame_id, tgt.frame_id, refs,
                      geo.polar, geo.direction, spatial, v1)


class Decoder(Module):
    """Fuse global and correlation features, then segmentation and flow heads."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        h = cfg.decode_hidden
        self.mlp_g = PointwiseMLP([cfg.unified_channels, h, h], rng)
        self.mlp_c = PointwiseMLP([cfg.corr_channels, h, h], rng)
        self.seg_head = PointwiseMLP([2 * h, h, 1], rng)
        self.flow_head = PointwiseMLP([2 * h, h, 3], rng, final_scale=0.1)

    def forward(self, patch_feat, slice_feat, corr_feat) -> PerceptionOutput:
        f_g = ad.concat([patch_feat, slice_feat.reshape((1,) + slice_feat.shape)], axis=0)
        f_u = ad.concat([ad.relu(self.mlp_g(f_g)), ad.relu(self.mlp_c(corr_feat))], axis=0)
        seg = ad.sigmoid(self.seg_head(f_u))
        flow = self.flow_head(f_u)
        return PerceptionOutput(seg.reshape(seg.shape[1:]), flow)


class RadarFlowNet(Module):
    def __init__(self, cfg: ModelConfig, spatial, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.spatial = tuple(int(n) for n in spatial)
        padded = tuple(n + (-n) % 4 for n in spatial)
        self.doppler = DopplerEncoder(cfg, rng)
        self.backbone = Backbone(cfg.doppler_channels + 2, cfg.pyramid_channels, rng)
        self.unify = []
        for level, c in enumerate(cfg.pyramid_channels):
            mlp = PointwiseMLP([c, cfg.corr_channels, cfg.corr_channels], rng)
            self.add_module(f"unify{level}", mlp)
            self.unify.append(mlp)
        self.deform = MSDeformAttn(cfg.corr_channels, cfg.heads, cfg.levels, cfg.points,
                                   cfg.value_dim, rng)
        self.fpn = FPN(cfg.corr_channels, rng, cfg.levels)
        self.patch_attn = PatchAttention(cfg.corr_channels, cfg.patch_channels, cfg.patch_heads,
                                         cfg.encoder_layers, rng, cfg.patch)
        self.slice_attn = SliceAttention(cfg.corr_channels, padded[0], cfg.slice_heads,
                                         cfg.encoder_layers, rng)
        self.decoder = Decoder(cfg, rng)
        # frozen coarse plane flow, trained separately
        self.planeflow = PlaneFlowNet(cfg, rng)

    def trainable_parameters(self) -> list:
        return [p for n, p in self.named_parameters() if not n.startswith("planeflow.")]

    def input_scale(self, doppler_axis: np.ndarray) -> np.ndarray:
        """Per-channel scaling of the Doppler feature: velocities in units of v_max."""
        vmax = float(np.max(np.abs(doppler_axis))) or 1.0
        s = np.ones(self.cfg.doppler_channels + 2)
        s[-2:] = 1.0 / vmax
        return s.reshape(1, -1, 1, 1, 1)

    def forward(self, x: PairInputs) -> PerceptionOutput:
        fs = self.doppler(x.power_s, x.doppler_axis, x.frame_s)
        ft = self.doppler(x.power_t, x.doppler_axis, x.frame_t)
        feats = self.backbone(ad.stack([fs, ft], axis=0) * self.input_scale(x.doppler_axis))
        queries, values = [], []
        for level, f in enumerate(feats):
            queries.append(self.unify[level](f[0]))
            values.append(self.unify[level](f[1]))
        corr = self.deform(queries, x.refs, values)
        f_c = self.fpn(corr)
        out = self.decoder(self.patch_attn(f_c, x.polar), self.slice_attn(f_c, x.direction), f_c)
        R, A, E = x.spatial
        if out.seg.shape != (R, A, E):
            out = PerceptionOutput(out.seg[:R, :A, :E], out.flow[:, :R, :A, :E])
        return out

    def infer(self, src: Tesseract, tgt: Tesseract) -> tuple:
        """(seg, flow) numpy arrays for one pair, without recording gradients."""
        with ad.no_grad():
            out = self.forward(prepare_pair(src, tgt, self.planeflow, self.cfg))
        return out.seg.data.copy(), out.flow.data.copy()

