"""Multi-scale deformable cross-attention between source queries and target values.

For a query q at level l with reference point p (level-l bin units), head m
gathers K samples from every value level l' at

    phi_{l'}(p) + dp_{m l' k},    phi_{l'}(p) = (p + 0.5) * 2^(l - l') - 0.5,

weights them with a softmax over the L*K (level, point) pairs, and maps the
head result back to the query width:

    out(q) = sum_m W_m sum_{l', k} A_{m l' k} W'_m v_{l'}(phi_{l'}(p) + dp_{m l' k}).

The layer returns q + out(q).
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..autodiff.nn import Linear, Module, Parameter
from ..autodiff.sampling import sample_points

__all__ = ["MSDeformAttn", "scale_reference"]


def scale_reference(ref: np.ndarray, level_from: int, level_to: int) -> np.ndarray:
    """Map bin coordinates between pyramid levels with aligned voxel centers."""
    return (np.asarray(ref) + 0.5) * 2.0 ** (level_from - level_to) - 0.5


def _offset_bias(heads: int, levels: int, points: int, rng: np.random.Generator) -> np.ndarray:
    """Initial sampling pattern: per head a direction, points spread along it."""
    dirs = rng.normal(size=(heads, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radius = 0.5 * (1 + np.arange(points)) / points
    bias = dirs[:, None, None, :] * radius[None, None, :, None] * np.ones((1, levels, 1, 1))
    return bias.reshape(-1)


class MSDeformAttn(Module):
    def __init__(self, channels: int, heads: int, levels: int, points: int, value_dim: int,
                 rng: np.random.Generator):
        super().__init__()
        self.channels, self.heads, self.levels, self.points = channels, heads, levels, points
        self.value_dim = value_dim
        n = heads * levels * points
        self.offsets = Linear(channels, 3 * n, rng, scale=0.0)
        self.offsets.bias.data = _offset_bias(heads, levels, points, rng)
        self.weights = Linear(channels, n, rng, scale=0.0)
        self.value_proj = Parameter(rng.normal(0, 1 / np.sqrt(channels), (heads, value_dim, channels)))
        self.out_proj = Parameter(rng.normal(0, 1 / np.sqrt(value_dim * heads),
                                             (heads, channels, value_dim)))

    def attention(self, q_tokens):
        """Offsets (Nq, M, L, K, 3) and weights (Nq, M, L, K) predicted from queries (Nq, C)."""
        nq = q_tokens.shape[0]
        M, L, K = self.heads, self.levels, self.points
        off = self.offsets(q_tokens).reshape(nq, M, L, K, 3)
        w = ad.softmax(self.weights(q_tokens).reshape(nq, M, L * K), axis=-1)
        return off, w.reshape(nq, M, L, K)

    def forward(self, queries, refs, values, offsets_override=None, weights_override=None):
        """queries[l]: (C, *S_l); refs[l]: (3, *S_l) numpy; values[l']: (C, *S_l').

        Returns a list of (C, *S_l) correlation features, one per query level.
        """
        M, K = self.heads, self.points
        projected = []
        for v in values:
            spatial = v.shape[1:]
            pv = ad.matmul(self.value_proj, v.reshape(self.channels, -1))    # (M, Cv, S)
            projected.append(pv.reshape((M, self.value_dim) + spatial))
        outs = []
        for l, (q, ref) in enumerate(zip(queries, refs)):
            spatial = q.shape[1:]
            nq = int(np.prod(spatial))
            q_tok = ad.transpose(q.reshape(self.channels, nq), 0, 1)           # (Nq, C)
            off, w = self.attention(q_tok)
            if offsets_override is not None:
                off = ad.as_tensor(offsets_override[l])
            if weights_override is not None:
                w = ad.as_tensor(weights_override[l])
            ref_flat = np.asarray(ref, dtype=float).reshape(3, nq)
            acc = None
            for lv, pv in enumerate(projected):
                base = scale_reference(ref_flat, l, lv).reshape(1, 3, nq, 1)
                d = off[:, :, lv].permute(1, 3, 0, 2)                           # (M, 3, Nq, K)
                coords = (d + base).reshape(M, 3, nq * K)
                samp = sample_points(pv, coords).reshape(M, self.value_dim, nq, K)
                wl = w[:, :, lv].permute(1, 0, 2).reshape(M, 1, nq, K)
                term = ad.sum(samp * wl, axis=-1)                               # (M, Cv, Nq)
                acc = term if acc is None else acc + term
            out = ad.sum(ad.matmul(self.out_proj, acc), axis=0)                 # (C, Nq)
            outs.append(q + out.reshape((self.channels,) + spatial))
        return outs
