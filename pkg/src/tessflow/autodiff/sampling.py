"""Trilinear sampling of volumes at continuous bin coordinates.

Coordinates are in bin units (index space). Out-of-range coordinates clamp to
the border, so the gradient w.r.t. a clamped coordinate is zero.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .tensor import Tensor, as_tensor, make_result

__all__ = ["sample_points", "trilinear_sample", "identity_grid", "warp"]

_CORNERS = [(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)]


def _axis_terms(c: np.ndarray, n: int):
    """Lower index, fraction and clamp-derivative mask along one axis."""
    if n == 1:
        zero = np.zeros(c.shape, dtype=np.int64)
        return zero, np.zeros(c.shape), np.zeros(c.shape, dtype=bool)
    inside = (c >= 0.0) & (c <= n - 1)
    cc = np.clip(c, 0.0, n - 1)
    i0 = np.minimum(np.floor(cc).astype(np.int64), n - 2)
    return i0, cc - i0, inside


def _prepare(coords: np.ndarray, extents):
    r0, fr, mr = _axis_terms(coords[:, 0], extents[0])
    a0, fa, ma = _axis_terms(coords[:, 1], extents[1])
    e0, fe, me = _axis_terms(coords[:, 2], extents[2])
    # n == 1 axes: the upper corner reuses index 0 with zero weight
    step = [1 if n > 1 else 0 for n in extents]
    R, A, E = extents
    idx, w = [], []
    for (i, j, k) in _CORNERS:
        flat = ((r0 + i * step[0]) * A + (a0 + j * step[1])) * E + (e0 + k * step[2])
        wt = (fr if i else 1 - fr) * (fa if j else 1 - fa) * (fe if k else 1 - fe)
        idx.append(flat)
        w.append(wt)
    return idx, w, (fr, fa, fe), (mr, ma, me)


def sample_points(volume, coords) -> Tensor:
    """Sample ``volume`` (G, C, R, A, E) at ``coords`` (G, 3, P) -> (G, C, P)."""
    volume, coords = as_tensor(volume), as_tensor(coords)
    if volume.ndim != 5 or coords.ndim != 3 or coords.shape[1] != 3:
        raise ValueError("expected volume (G,C,R,A,E) and coords (G,3,P)")
    if volume.shape[0] != coords.shape[0]:
        raise ValueError("group dimension mismatch between volume and coords")
    cd = coords.data
    if not np.all(np.isfinite(cd)):
        raise ValueError("sampling coordinates must be finite")
    G, C = volume.shape[:2]
    extents = volume.shape[2:]
    S = int(np.prod(extents))
    P = cd.shape[2]
    vflat = volume.data.reshape(G, C, S)
    idx, w, fracs, masks = _prepare(cd, extents)

    def gather(flat):
        return np.take_along_axis(vflat, np.broadcast_to(flat[:, None, :], (G, C, P)), axis=2)

    out = np.zeros((G, C, P))
    for flat, wt in zip(idx, w):
        out += wt[:, None, :] * gather(flat)

    def bw(g):
        gv = gc = None
        if volume.requires_grad:
            rows = np.concatenate([(flat + np.arange(G)[:, None] * S).ravel() for flat in idx])
            cols = np.tile(np.arange(G * P), len(idx))
            data = np.concatenate([wt.ravel() for wt in w])
            mat = sp.csr_matrix((data, (rows, cols)), shape=(G * S, G * P))
            gflat = g.transpose(0, 2, 1).reshape(G * P, C)
            gv = np.asarray(mat @ gflat).reshape(G, S, C).transpose(0, 2, 1).reshape(volume.shape)
        if coords.requires_grad:
            fr, fa, fe = fracs
            dr = np.zeros((G, C, P))
            da = np.zeros((G, C, P))
            de = np.zeros((G, C, P))
            for (i, j, k), flat in zip(_CORNERS, idx):
                v = gather(flat)
                wr = fr if i else 1 - fr
                wa = fa if j else 1 - fa
                we = fe if k else 1 - fe
                sr = 1.0 if i else -1.0
                sa = 1.0 if j else -1.0
                se = 1.0 if k else -1.0
                dr += (sr * wa * we)[:, None, :] * v
                da += (sa * wr * we)[:, None, :] * v
                de += (se * wr * wa)[:, None, :] * v
            gc = np.stack([
                (g * dr).sum(axis=1) * masks[0],
                (g * da).sum(axis=1) * masks[1],
                (g * de).sum(axis=1) * masks[2],
            ], axis=1)
        return gv, gc

    return make_result(out, (volume, coords), bw)


def identity_grid(extents) -> np.ndarray:
    """Index coordinates (3, R, A, E) of every voxel."""
    return np.stack(np.meshgrid(*[np.arange(n, dtype=np.float64) for n in extents],
                                indexing="ij"), axis=0)


def trilinear_sample(volume, coords) -> Tensor:
    """Sample ``volume`` (C, R, A, E) at per-voxel ``coords`` (3, R, A, E)."""
    volume, coords = as_tensor(volume), as_tensor(coords)
    if volume.ndim != 4 or coords.ndim != 4 or coords.shape[0] != 3:
        raise ValueError("expected volume (C,R,A,E) and coords (3,R,A,E)")
    if volume.shape[1:] != coords.shape[1:]:
        raise ValueError(
            f"spatial extents differ: volume {volume.shape[1:]} vs coords {coords.shape[1:]}")
    C = volume.shape[0]
    spatial = volume.shape[1:]
    out = sample_points(volume.reshape((1, C) + spatial), coords.reshape((1, 3, -1)))
    return out.reshape((C,) + spatial)


def warp(volume, flow) -> Tensor:
    """Backward warp: sample ``volume`` at identity grid + ``flow`` (bin units).

    ``volume`` may be (R, A, E) or (C, R, A, E); ``flow`` is (3, R, A, E).
    """
    volume, flow = as_tensor(volume), as_tensor(flow)
    squeeze = volume.ndim == 3
    if squeeze:
        volume = volume.reshape((1,) + volume.shape)
    coords = flow + identity_grid(flow.shape[1:])
    out = trilinear_sample(volume, coords)
    return out.reshape(out.shape[1:]) if squeeze else out
