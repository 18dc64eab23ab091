"""Segmentation and scene-flow metrics.

Segmentation compares a predicted voxel mask with a reference point cloud:
a voxel is a true target when at least three points lie within 0.5 m of its
center. Flow metrics compare bin-unit flows after converting both to meters
with the local linearisation of the polar grid at every voxel center.

Sums use ``math.fsum`` so results do not depend on voxel order.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..sim.truth import OCCUPANCY_MIN_POINTS, OCCUPANCY_RADIUS, occupancy_from_points
from ..tesseract.grid import PolarGrid

__all__ = ["SegMetrics", "FlowMetrics", "seg_metrics", "flow_metrics", "flow_metrics_meters",
           "chamfer_distance", "voxel_filter", "CD_VOXEL"]

CD_VOXEL = 0.4


@dataclass
class SegMetrics:
    pd: Optional[float]       # percent of occupied reference voxels detected
    pfa: Optional[float]      # percent of empty reference voxels flagged
    cd: Optional[float]       # meters
    snr_db: Optional[float]
    empty_prediction: bool
    num_predicted: int
    num_occupied: int

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FlowMetrics:
    epe3d: Optional[float]
    acc_s3d: Optional[float]
    acc_r3d: Optional[float]
    outlier3d: Optional[float]
    num_valid: int

    def to_dict(self) -> dict:
        return asdict(self)


def _norms(x: np.ndarray) -> np.ndarray:
    """Row norms computed as sqrt(x0^2 + x1^2 + x2^2) in a fixed order."""
    x = np.asarray(x, dtype=float)
    return np.sqrt(x[:, 0] * x[:, 0] + x[:, 1] * x[:, 1] + x[:, 2] * x[:, 2])


def _mean(values) -> float:
    values = list(np.asarray(values, dtype=float).ravel())
    return math.fsum(values) / len(values)


def voxel_filter(points: np.ndarray, size: float = CD_VOXEL) -> np.ndarray:
    """Replace the points in each cubic cell of edge ``size`` by their centroid."""
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not len(points):
        return points
    keys = np.floor(points / size).astype(np.int64)
    _, inverse = np.unique(keys, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    out = np.zeros((inverse.max() + 1, 3))
    np.add.at(out, inverse, points)
    return out / np.bincount(inverse)[:, None]


def _one_sided(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over a of the distance to the nearest point of b."""
    _, nn = cKDTree(b).query(a)
    return _mean(_norms(a - b[nn]))


def chamfer_distance(a: np.ndarray, b: np.ndarray) -> Optional[float]:
    """Symmetric Chamfer distance: the average of the two one-sided mean distances."""
    a, b = np.asarray(a, dtype=float).reshape(-1, 3), np.asarray(b, dtype=float).reshape(-1, 3)
    if not len(a) or not len(b):
        return None
    return 0.5 * (_one_sided(a, b) + _one_sided(b, a))


def seg_metrics(pred_mask: np.ndarray, gt_points: np.ndarray, grid: PolarGrid,
                energy: Optional[np.ndarray] = None, radius: float = OCCUPANCY_RADIUS,
                min_points: int = OCCUPANCY_MIN_POINTS) -> SegMetrics:
    """Detection metrics of a boolean (R, A, E) mask against a reference point cloud.

    ``energy`` is an optional (R, A, E) or (D, R, A, E) power volume used for
    the SNR; a 4-D tesseract is averaged over Doppler first.
    """
    pred = np.asarray(pred_mask, dtype=bool)
    if pred.shape != grid.spatial_shape:
        raise ValueError(f"mask extents {pred.shape} do not match grid {grid.spatial_shape}")
    occ, _ = occupancy_from_points(gt_points, grid, radius, min_points)
    n_occ, n_neg = int(occ.sum()), int((~occ).sum())
    tp = int((pred & occ).sum())
    fp = int((pred & ~occ).sum())
    empty = not pred.any()
    pd = 100.0 * tp / n_occ if n_occ else None
    pfa = 100.0 * fp / n_neg if n_neg else None
    gt_filtered = voxel_filter(gt_points)
    centers = grid.voxel_centers()[pred]
    if empty:
        # no predicted points: only the prediction-to-reference side is defined, and it is vacuous
        cd = 0.0 if len(gt_filtered) else None
    else:
        cd = chamfer_distance(centers, gt_filtered)
    snr = None
    if energy is not None:
        e = np.asarray(energy, dtype=float)
        e = e.mean(axis=0) if e.ndim == 4 else e
        if pred.any() and (~pred).any():
            sig, noise = _mean(e[pred]), _mean(e[~pred])
            if sig > 0 and noise > 0:
                snr = 10.0 * math.log10(sig / noise)
    return SegMetrics(pd, pfa, cd, snr, empty, int(pred.sum()), n_occ)


def flow_metrics_meters(pred: np.ndarray, gt: np.ndarray) -> FlowMetrics:
    """Metrics over matched rows of metric flow vectors (N, 3)."""
    pred = np.asarray(pred, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt, dtype=float).reshape(-1, 3)
    n = len(gt)
    if n == 0:
        return FlowMetrics(None, None, None, None, 0)
    err = _norms(pred - gt)
    rel = err / np.maximum(_norms(gt), 1e-6)
    acc_s = int(np.sum((err < 0.05) | (rel < 0.05)))
    acc_r = int(np.sum((err < 0.1) | (rel < 0.1)))
    outlier = int(np.sum((err > 0.3) | (rel > 0.1)))
    return FlowMetrics(_mean(err), 100.0 * acc_s / n, 100.0 * acc_r / n, 100.0 * outlier / n, n)


def flow_metrics(pred_flow: np.ndarray, gt_flow: np.ndarray, valid: np.ndarray,
                 grid: PolarGrid) -> FlowMetrics:
    """Metrics of bin-unit flows (3, R, A, E) over the ``valid`` voxels."""
    valid = np.asarray(valid, dtype=bool)
    if np.shape(pred_flow) != np.shape(gt_flow) or np.shape(gt_flow)[1:] != valid.shape:
        raise ValueError("flow and mask extents differ")
    pm = np.moveaxis(grid.bins_to_meters(pred_flow), 0, -1)[valid]
    gm = np.moveaxis(grid.bins_to_meters(gt_flow), 0, -1)[valid]
    return flow_metrics_meters(pm, gm)
