"""Scene-flow labels from sensor poses and tracked boxes.

Motion between two frames splits into a rigid part ``T_s`` caused by the
moving sensor and, for each tracked box that moves on its own, a box
transform ``T_d``. Both map source-frame coordinates to target-frame
coordinates, so the displacement of a voxel center ``c`` is ``T c - c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence

import numpy as np

from ..sim.scene import SceneSpec, TrackedBox
from ..tesseract.grid import PolarGrid

__all__ = ["FlowLabels", "flow_labels", "labels_from_scenes", "is_rigid", "estimate_rigid",
           "apply_rigid", "DYNAMIC_THRESHOLD"]

DYNAMIC_THRESHOLD = 0.05


@dataclass
class FlowLabels:
    flow: np.ndarray         # (3, R, A, E) bins, zero where invalid
    valid: np.ndarray        # (R, A, E) bool
    ego: np.ndarray          # T_s, 4x4
    objects: Dict[int, np.ndarray] = field(default_factory=dict)   # dynamic track id -> T_d
    unmatched: tuple = ()


def apply_rigid(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=float) @ T[:3, :3].T + T[:3, 3]


def is_rigid(T: np.ndarray, tol: float = 1e-9) -> bool:
    Rm = T[:3, :3]
    return bool(np.allclose(Rm.T @ Rm, np.eye(3), atol=tol) and abs(np.linalg.det(Rm) - 1) < tol
                and np.allclose(T[3], [0, 0, 0, 1]))


def estimate_rigid(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Least-squares rigid transform with dst ~ R src + t (Kabsch)."""
    src, dst = np.asarray(src, dtype=float), np.asarray(dst, dtype=float)
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    u, _, vt = np.linalg.svd((src - cs).T @ (dst - cd))
    d = np.sign(np.linalg.det(vt.T @ u.T))
    Rm = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    T = np.eye(4)
    T[:3, :3] = Rm
    T[:3, 3] = cd - Rm @ cs
    return T


def _corners(box: TrackedBox) -> np.ndarray:
    signs = np.array([[i, j, k] for i in (-1, 1) for j in (-1, 1) for k in (-1, 1)], dtype=float)
    return apply_rigid(box.pose(), signs * box.size / 2.0)


def flow_labels(pose_src: np.ndarray, pose_tgt: np.ndarray, boxes_src: Sequence[TrackedBox],
                boxes_tgt: Sequence[TrackedBox], occupancy: np.ndarray, grid: PolarGrid,
                threshold: float = DYNAMIC_THRESHOLD) -> FlowLabels:
    """Label every occupied voxel with the bin displacement of its center.

    ``pose_*`` are sensor poses in a common world frame. A box whose two-frame
    transform differs from the ego transform by more than ``threshold`` meters
    at any corner is dynamic; voxels inside it follow the box. Voxels inside a
    box whose track id has no partner in the other frame are marked invalid.
    """
    for T in (pose_src, pose_tgt):
        if not is_rigid(np.asarray(T, dtype=float)):
            raise ValueError("poses must be rigid transforms")
    occupancy = np.asarray(occupancy, dtype=bool)
    if occupancy.shape != grid.spatial_shape:
        raise ValueError("occupancy extents do not match the grid")
    T_s = np.linalg.inv(pose_tgt) @ pose_src
    idx = grid.voxel_index_grid()
    centers = grid.index_to_cartesian(idx)
    disp = apply_rigid(T_s, centers) - centers
    valid = occupancy.copy()
    by_id = {b.track_id: b for b in boxes_tgt}
    objects, unmatched = {}, []
    for b0 in boxes_src:
        inside = b0.contains(centers)
        b1 = by_id.get(b0.track_id)
        if b1 is None:
            unmatched.append(b0.track_id)
            valid &= ~inside
            continue
        T_d = b1.pose() @ np.linalg.inv(b0.pose())
        corners = _corners(b0)
        residual = np.linalg.norm(apply_rigid(T_d, corners) - apply_rigid(T_s, corners), axis=1)
        if residual.max() > threshold:
            objects[b0.track_id] = T_d
            disp[inside] = apply_rigid(T_d, centers[inside]) - centers[inside]
    flow = np.moveaxis(grid.meters_to_bins(idx, disp), -1, 0)
    flow = np.where(valid[None], flow, 0.0)
    return FlowLabels(flow, valid, T_s, objects, tuple(unmatched))


def labels_from_scenes(src: SceneSpec, tgt: SceneSpec, occupancy: np.ndarray, grid: PolarGrid,
                       dt: float) -> FlowLabels:
    """Labels for a simulated pair: the source sensor sits at the world origin."""
    return flow_labels(np.eye(4), src.ego.pose_delta(dt), src.boxes, tgt.boxes, occupancy, grid)
