"""Compact coarse-to-fine 2-D flow network for the RA / RE / AE plane projections.

Images are handled as (N, C, H, W, 1) volumes so the 3-D convolution and
trilinear sampling primitives serve the 2-D case unchanged. The network
builds a 3-level feature pyramid, matches features with a full local cost
volume at the coarsest level (soft-argmax over displacements), then for each
finer level upsamples the flow with learned convex weights and refines it from
a small correlation around the current estimate.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff.nn import Conv3d, Module, Parameter
from ..autodiff.sampling import sample_points
from .config import ModelConfig

__all__ = ["PlaneFlowNet", "plane_energy", "downsample_mean", "plane_flow_loss",
           "warp_image", "feature_input"]


def conv2d(c_in, c_out, rng, stride=1, scale=1.0):
    return Conv3d(c_in, c_out, kernel=(3, 3, 1), stride=(stride, stride, 1), padding=(1, 1, 0),
                  rng=rng, scale=scale)


def plane_energy(plane: np.ndarray) -> np.ndarray:
    """Scale-free plane intensity: division by the 99th percentile, clipped to [0, 4]."""
    ref = np.percentile(plane, 99)
    ref = ref if ref > 0 else 1.0
    return np.clip(plane / ref, 0.0, 4.0)


def feature_input(img: np.ndarray) -> np.ndarray:
    """log10(E + 1e-3) mapped to roughly [0, 1.2] for the convolutional encoder."""
    return (np.log10(np.maximum(img, 0.0) + 1e-3) + 3.0) / 3.0


def downsample_mean(img: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return img
    H, W = img.shape
    return img.reshape(H // factor, factor, W // factor, factor).mean(axis=(1, 3))


def _identity2(H, W):
    return np.stack(np.meshgrid(np.arange(H, dtype=float), np.arange(W, dtype=float),
                                indexing="ij"))


def warp_image(img, flow):
    """Sample image tensor (C, H, W) at identity + flow (2, H, W), border clamp."""
    img, flow = ad.as_tensor(img), ad.as_tensor(flow)
    C, H, W = img.shape
    coords = flow + _identity2(H, W)
    coords3 = ad.concat([coords, ad.Tensor(np.zeros((1, H, W)))], axis=0)
    out = sample_points(img.reshape(1, C, H, W, 1), coords3.reshape(1, 3, H * W))
    return out.reshape(C, H, W)


def _shift(fp, dy, dx, radius, H, W):
    """Crop of a ``radius``-padded map so that out[y, x] = f[y + dy, x + dx]."""
    return fp[:, radius + dy: radius + dy + H, radius + dx: radius + dx + W]


def correlation(f1, f2, radius: int):
    """Channel-mean dot products for every displacement in [-radius, radius]^2."""
    C, H, W = f1.shape
    f2p = ad.pad(f2, ((0, 0), (radius, radius), (radius, radius)))
    outs = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            outs.append(ad.mean(f1 * _shift(f2p, dy, dx, radius, H, W), axis=0))
    return ad.stack(outs, axis=0)


def _displacements(radius):
    d = np.arange(-radius, radius + 1, dtype=float)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    return dy.reshape(-1), dx.reshape(-1)


class PlaneFlowNet(Module):
    """Coarse-to-fine plane flow.

    Each pyramid level's feature is the learned encoder output plus one
    mean-subtracted log-intensity channel, so matching works from the start
    and training sharpens it. The coarsest level takes a soft-argmax over a
    cost volume of radius ``plane_radius``. Each finer level convexly
    upsamples the coarser flow and adds a correction below
    ``MAX_CORRECTION`` bins per component: a radius-1 soft-argmax around the
    upsampled estimate plus a learned residual, squashed by tanh.

    The returned flow is the antisymmetric part ``(g(S, T) - g(T, S)) / 2`` of
    that estimator ``g``, so identical planes give exactly zero flow and
    swapping the inputs negates the output.
    """

    refine_radius = 1
    MAX_CORRECTION = 0.95

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        c0, c1, c2 = cfg.plane_channels
        self.radius = cfg.plane_radius
        self.enc0 = conv2d(1, c0, rng)
        self.enc1 = conv2d(c0, c1, rng, stride=2)
        self.enc2 = conv2d(c1, c2, rng, stride=2)
        self.log_temperature = Parameter(np.full(3, np.log(0.05)))
        # convex upsampling masks: 9 neighbour weights per fine sub-pixel (2 x 2)
        self.mask1 = conv2d(c1 + 1, 9 * 4, rng, scale=0.1)
        self.mask0 = conv2d(c0 + 1, 9 * 4, rng, scale=0.1)
        n_ref = (2 * self.refine_radius + 1) ** 2
        self.refine1 = conv2d(n_ref + c1 + 1 + 2, 2, rng, scale=0.1)
        self.refine0 = conv2d(n_ref + c0 + 1 + 2, 2, rng, scale=0.1)

    # -- helpers -------------------------------------------------------------
    @staticmethod
    def _run(conv, x):
        """Apply a 2-D conv to (C, H, W) -> (C', H', W')."""
        C, H, W = x.shape
        y = conv(x.reshape(1, C, H, W, 1))
        return y.reshape(y.shape[1:4])

    def features(self, img):
        # log compression keeps faint structure visible to the encoder; the loss stays linear
        base = feature_input(img)
        x = ad.Tensor(base[None])
        feats = []
        f = x
        for level, conv in enumerate((self.enc0, self.enc1, self.enc2)):
            f = ad.relu(self._run(conv, f))
            inten = downsample_mean(base, 2 ** level)
            inten = (inten - inten.mean()) * np.sqrt(f.shape[0] + 1)
            feats.append(ad.concat([f, ad.Tensor(inten[None])], axis=0))
        return feats

    def _soft_argmax(self, cost, radius: int, level: int):
        prob = ad.softmax(cost * ad.exp(-self.log_temperature[level]), axis=0)
        dy, dx = _displacements(radius)
        return ad.stack([ad.sum(prob * dy.reshape(-1, 1, 1), axis=0),
                         ad.sum(prob * dx.reshape(-1, 1, 1), axis=0)], axis=0)

    def convex_upsample(self, flow, feat, mask_conv):
        """Upsample flow (2, h, w) -> (2, 2h, 2w) as a convex mix of 3 x 3 coarse neighbours."""
        _, h, w = flow.shape
        raw = self._run(mask_conv, feat)                          # (36, 2h, 2w) at fine res
        raw = raw.reshape(9, 4, 2 * h, 2 * w)
        # each fine pixel keeps the mask slice matching its sub-pixel position
        sub = (np.arange(2 * h)[:, None] % 2) * 2 + (np.arange(2 * w)[None, :] % 2)
        sel = np.zeros((1, 4, 2 * h, 2 * w))
        for s in range(4):
            sel[0, s] = sub == s
        weights = ad.softmax(ad.sum(raw * sel, axis=1), axis=0)    # (9, 2h, 2w)
        fp = ad.pad(flow * 2.0, ((0, 0), (1, 1), (1, 1)))
        neigh = []
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                shifted = fp[:, 1 + dy: 1 + dy + h, 1 + dx: 1 + dx + w]
                neigh.append(ad.upsample_nearest(shifted, (2, 2), (1, 2)))
        stack = ad.stack(neigh, axis=0)                            # (9, 2, 2h, 2w)
        return ad.sum(stack * weights.reshape(9, 1, 2 * h, 2 * w), axis=0)

    def refine(self, flow, f_src, f_tgt, conv, level: int):
        warped = warp_image(f_tgt, flow)
        corr = correlation(f_src, warped, self.refine_radius)
        matched = self._soft_argmax(corr, self.refine_radius, level)
        delta = self._run(conv, ad.concat([corr, f_src, flow], axis=0))
        return flow + ad.tanh((matched + delta) * (1.0 / self.MAX_CORRECTION)) * self.MAX_CORRECTION

    def forward(self, src: np.ndarray, tgt: np.ndarray) -> list:
        """Flows (2, H/2^l, W/2^l) for l = 0, 1, 2, in bins of each scale."""
        H, W = src.shape
        if H < 8 or W < 8:
            raise ValueError(f"plane extents {src.shape} below 8")
        if H % 4 or W % 4:
            raise ValueError(f"plane extents {src.shape} must be divisible by 4")
        fs, ft = self.features(src), self.features(tgt)
        fwd, bwd = self.estimate(fs, ft), self.estimate(ft, fs)
        return [(a - b) * 0.5 for a, b in zip(fwd, bwd)]

    def estimate(self, feats_src, feats_tgt) -> list:
        """One-directional coarse-to-fine estimate from precomputed feature pyramids."""
        s0, s1, s2 = feats_src
        t0, t1, t2 = feats_tgt
        flow2 = self._soft_argmax(correlation(s2, t2, self.radius), self.radius, 2)
        flow1 = self.refine(self.convex_upsample(flow2, s1, self.mask1), s1, t1, self.refine1, 1)
        flow0 = self.refine(self.convex_upsample(flow1, s0, self.mask0), s0, t0, self.refine0, 0)
        return [flow0, flow1, flow2]


def plane_flow_loss(flows, e_src: np.ndarray, e_tgt: np.ndarray, magnitude_weight: float = 0.0):
    """2-D energy-flow loss summed over scales: mean(E_S |E_S - warp(E_T, f)|).

    The energy term leaves flow on dark pixels unconstrained; a positive
    ``magnitude_weight`` adds ``magnitude_weight * mean(|f|^2)`` per scale so
    that flow without evidence decays to zero.
    """
    total = None
    for level, flow in enumerate(flows):
        es = downsample_mean(e_src, 2 ** level)
        et = downsample_mean(e_tgt, 2 ** level)
        warped = warp_image(et[None], flow).reshape(es.shape)
        term = ad.mean(es * ad.abs(warped - es))
        if magnitude_weight:
            term = term + ad.mean(ad.square(flow)) * magnitude_weight
        total = term if total is None else total + term
    return total
