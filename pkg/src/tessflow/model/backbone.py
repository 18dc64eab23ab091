"""Residual 3-D convolutional backbone and the top-down feature pyramid aggregator."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff.nn import Conv3d, Module, PointwiseLinear

__all__ = ["ResidualBlock", "Backbone", "FPN", "pad_to_multiple"]


def pad_to_multiple(x: np.ndarray, multiple: int = 4) -> tuple:
    """Zero-pad the trailing three axes up to a multiple; returns (padded, original extents)."""
    spatial = x.shape[-3:]
    pads = [(0, 0)] * (x.ndim - 3) + [(0, (-n) % multiple) for n in spatial]
    return np.pad(x, pads), spatial


class ResidualBlock(Module):
    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.conv1 = Conv3d(channels, channels, 3, rng=rng)
        self.conv2 = Conv3d(channels, channels, 3, rng=rng, scale=0.5)

    def forward(self, x):
        return ad.relu(x + self.conv2(ad.relu(self.conv1(x))))


class Backbone(Module):
    """Three stages; stage l halves the extents l times and has C_l channels."""

    def __init__(self, c_in: int, channels, rng: np.random.Generator, blocks: int = 2):
        super().__init__()
        self.stages = []
        prev = c_in
        for level, c in enumerate(channels):
            stem = Conv3d(prev, c, 3, stride=1 if level == 0 else 2, rng=rng)
            self.add_module(f"stem{level}", stem)
            layers = [stem]
            for b in range(blocks):
                blk = ResidualBlock(c, rng)
                self.add_module(f"block{level}_{b}", blk)
                layers.append(blk)
            self.stages.append(layers)
            prev = c

    def forward(self, x):
        """x: (N, C_in, R, A, E) -> list of (N, C_l, R/2^l, A/2^l, E/2^l)."""
        feats = []
        for layers in self.stages:
            x = ad.relu(layers[0](x))
            for blk in layers[1:]:
                x = blk(x)
            feats.append(x)
        return feats


class FPN(Module):
    """Top-down aggregation: bias-free 1x1x1 laterals, nearest x2 upsampling, 3x3x3 output."""

    def __init__(self, channels: int, rng: np.random.Generator, levels: int = 3):
        super().__init__()
        self.laterals = []
        for level in range(levels):
            lat = PointwiseLinear(channels, channels, rng, bias=False)
            self.add_module(f"lateral{level}", lat)
            self.laterals.append(lat)
        self.out = Conv3d(channels, channels, 3, rng=rng, bias=False)

    def forward(self, feats):
        """feats: list of (C, R/2^l, A/2^l, E/2^l) -> (C, R, A, E)."""
        if len(feats) != len(self.laterals):
            raise ValueError(f"expected {len(self.laterals)} levels, got {len(feats)}")
        top = None
        for level in reversed(range(len(feats))):
            lat = self.laterals[level](feats[level])
            top = lat if top is None else lat + ad.upsample_nearest(top, (2, 2, 2), (1, 2, 3))
        y = self.out(top.reshape((1,) + top.shape))
        return y.reshape(y.shape[1:])
