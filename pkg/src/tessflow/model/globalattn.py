"""Global context: self-attention over 3-D patches and over direction slices."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff.nn import Linear, Module, PointwiseMLP, TransformerEncoder

__all__ = ["patchify", "unpatchify", "PatchAttention", "SliceAttention", "normalized_polar"]


def patchify(x, p: int):
    """(C, R, A, E) -> tokens (R/p * A/p * E/p, C * p^3), channel-major within a token."""
    x = ad.as_tensor(x)
    C, R, A, E = x.shape
    y = x.reshape(C, R // p, p, A // p, p, E // p, p)
    y = y.permute(1, 3, 5, 0, 2, 4, 6)
    return y.reshape((R // p) * (A // p) * (E // p), C * p ** 3)


def unpatchify(tokens, p: int, spatial):
    """Inverse of :func:`patchify`: tokens (T, C * p^3) -> (C, R, A, E)."""
    tokens = ad.as_tensor(tokens)
    R, A, E = spatial
    C = tokens.shape[1] // p ** 3
    y = tokens.reshape(R // p, A // p, E // p, C, p, p, p)
    y = y.permute(3, 0, 4, 1, 5, 2, 6)
    return y.reshape(C, R, A, E)


def normalized_polar(polar: np.ndarray) -> np.ndarray:
    """Scale each polar channel by its largest magnitude so encodings stay O(1)."""
    scale = np.max(np.abs(polar.reshape(3, -1)), axis=1)
    return polar / np.where(scale > 0, scale, 1.0).reshape(3, 1, 1, 1)


class PatchAttention(Module):
    """Non-overlapping p^3 patches as tokens, polar positional encoding, encoder, unshuffle."""

    def __init__(self, channels: int, token_dim: int, heads: int, layers: int,
                 rng: np.random.Generator, patch: int = 4):
        super().__init__()
        self.patch = patch
        self.embed = Linear(channels * patch ** 3, token_dim, rng)
        self.pos = Linear(3 * patch ** 3, token_dim, rng)
        self.encoder = TransformerEncoder(token_dim, heads, layers, 2 * token_dim, rng)

    def tokens(self, feat, polar: np.ndarray):
        p = self.patch
        return self.embed(patchify(feat, p)) + self.pos(patchify(normalized_polar(polar), p))

    def forward(self, feat, polar: np.ndarray):
        """feat (C, R, A, E) -> (token_dim / p^3, R, A, E); pads to multiples of p, then crops."""
        spatial = feat.shape[1:]
        p = self.patch
        widths = [(0, 0)] + [(0, (-n) % p) for n in spatial]
        if any(w[1] for w in widths):
            feat = ad.pad(feat, widths)
            polar = np.pad(polar, widths)
        out = unpatchify(self.encoder(self.tokens(feat, polar)), p, feat.shape[1:])
        R, A, E = spatial
        return out[:, :R, :A, :E]


class SliceAttention(Module):
    """Each (a, e) column of range bins is one token; tokens attend across directions."""

    def __init__(self, channels: int, num_range: int, heads: int, layers: int,
                 rng: np.random.Generator):
        super().__init__()
        self.reduce = PointwiseMLP([channels, channels // 2, 1], rng)
        self.pos = Linear(3, num_range, rng)
        self.encoder = TransformerEncoder(num_range, heads, layers, 2 * num_range, rng)

    def forward(self, feat, direction: np.ndarray):
        """feat (C, R, A, E), direction (3, R, A, E) unit vectors -> (R, A, E)."""
        _, R, A, E = feat.shape
        col = self.reduce(feat).reshape(R, A * E)
        tokens = ad.transpose(col, 0, 1)                                 # (A*E, R)
        dirs = np.asarray(direction)[:, 0].reshape(3, A * E).T           # (A*E, 3)
        out = self.encoder(tokens + self.pos(ad.Tensor(dirs)))
        return ad.transpose(out, 0, 1).reshape(R, A, E)
