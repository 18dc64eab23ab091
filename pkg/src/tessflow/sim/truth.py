"""Exact ground truth for simulated scene pairs, plus a random scene generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ..tesseract.grid import PolarGrid
from .config import RadarConfig
from .scene import EgoMotion, SceneSpec, Scatterer, TrackedBox, advance_scene, relative_velocity

__all__ = [
    "GroundTruth", "cluster_points", "occupancy_from_points", "ground_truth", "random_scene",
    "CLUSTER_SIZE", "CLUSTER_SIGMA", "OCCUPANCY_RADIUS", "OCCUPANCY_MIN_POINTS",
]

CLUSTER_SIZE = 5
CLUSTER_SIGMA = 0.1
OCCUPANCY_RADIUS = 0.5
OCCUPANCY_MIN_POINTS = 3


@dataclass
class GroundTruth:
    occupancy: np.ndarray  # (R, A, E) bool
    flow: np.ndarray       # (3, R, A, E) bins
    points: np.ndarray     # (P, 3) synthetic point cloud of the source frame
    owner: np.ndarray      # (R, A, E) owning scatterer index, -1 where empty


def cluster_points(scene: SceneSpec) -> tuple:
    """Jittered 5-point cluster per scatterer: (points (5N, 3), scatterer index (5N,))."""
    pos = scene.positions()
    pts, owner = [], []
    for i, p in enumerate(pos):
        rng = np.random.default_rng([int(scene.seed) & 0xFFFFFFFF, i, 0xC1])
        pts.append(p + CLUSTER_SIGMA * rng.standard_normal((CLUSTER_SIZE, 3)))
        owner.append(np.full(CLUSTER_SIZE, i))
    if not pts:
        return np.zeros((0, 3)), np.zeros(0, dtype=int)
    return np.concatenate(pts), np.concatenate(owner)


def occupancy_from_points(points: np.ndarray, grid: PolarGrid, radius: float = OCCUPANCY_RADIUS,
                          min_points: int = OCCUPANCY_MIN_POINTS, labels=None) -> tuple:
    """Voxels whose center has at least ``min_points`` points within ``radius``.

    Returns (occupancy (R, A, E) bool, owner (R, A, E) int) where owner is the
    majority label among the neighbouring points (-1 where unoccupied).
    """
    centers = grid.voxel_centers().reshape(-1, 3)
    occ = np.zeros(len(centers), dtype=bool)
    owner = np.full(len(centers), -1, dtype=int)
    if len(points):
        tree = cKDTree(points)
        neigh = tree.query_ball_point(centers, radius)
        for v, idx in enumerate(neigh):
            if len(idx) >= min_points:
                occ[v] = True
                if labels is not None:
                    owner[v] = int(np.argmax(np.bincount(np.asarray(labels)[idx])))
    return occ.reshape(grid.spatial_shape), owner.reshape(grid.spatial_shape)


def ground_truth(src: SceneSpec, tgt: SceneSpec, grid: PolarGrid) -> GroundTruth:
    """Occupancy from the source point clusters and flow of each voxel's owning scatterer."""
    if len(src.scatterers) != len(tgt.scatterers):
        raise ValueError("source and target scenes must share scatterer identity")
    points, labels = cluster_points(src)
    occ, owner = occupancy_from_points(points, grid, labels=labels)
    flow = np.zeros((3,) + grid.spatial_shape)
    if occ.any():
        disp = tgt.positions() - src.positions()
        idx = np.argwhere(occ)
        f = grid.meters_to_bins(idx.astype(float), disp[owner[occ]])
        flow[:, idx[:, 0], idx[:, 1], idx[:, 2]] = f.T
    return GroundTruth(occ, flow, points, owner)


def _snap(grid: PolarGrid, r, a, e, rng, jitter: float) -> np.ndarray:
    return grid.index_to_cartesian(np.array([r, a, e], dtype=float)) + \
        rng.uniform(-jitter, jitter, size=3)


def random_scene(seed: int, cfg: RadarConfig, grid: PolarGrid, dynamic: bool = True,
                 num_objects=(1, 3), num_clutter=(4, 8), max_speed: float = 6.0,
                 max_ego_speed: float = 3.0, jitter: float = 0.05) -> SceneSpec:
    """Scatterers snapped near voxel centers: a few object boxes plus static clutter.

    Dynamic scenes give the ego radar a forward speed and small yaw rate and
    give each object a constant velocity; static scenes have no motion at all.
    Resamples until every scatterer and its successor stay inside the
    unambiguous range/velocity window.
    """
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, 0x5CE])
    R, A, E = grid.spatial_shape
    r_lo, r_hi = max(2, int(0.2 * R)), max(3, int(0.5 * R))
    for _ in range(1000):
        used = set()
        scat, boxes = [], []
        ego = EgoMotion()
        if dynamic:
            ego = EgoMotion(linear=[rng.uniform(0.5, max_ego_speed), 0.0, 0.0],
                            angular=[0.0, 0.0, rng.uniform(-0.1, 0.1)])
        for k in range(int(rng.integers(num_objects[0], num_objects[1] + 1))):
            r0 = int(rng.integers(r_lo, r_hi))
            a0 = int(rng.integers(1, A - 2))
            e0 = int(rng.integers(1, E - 2))
            vel = np.zeros(3)
            if dynamic:
                heading = rng.normal(size=3) * np.array([1.0, 0.5, 0.0])
                vel = heading / (np.linalg.norm(heading) + 1e-12) * rng.uniform(2.0, max_speed)
            cells = [(r0, a0, e0), (r0 + 1, a0, e0), (r0, a0 + 1, e0), (r0 + 1, a0 + 1, e0)]
            n_cells = int(rng.integers(2, 5))
            pts = []
            for c in cells[:n_cells]:
                if c in used:
                    continue
                used.add(c)
                p = _snap(grid, *c, rng, jitter)
                pts.append(p)
                scat.append(Scatterer(p, vel, rng.uniform(0.6, 1.5), object_id=k))
            if pts:
                pts = np.array(pts)
                center = pts.mean(axis=0)
                size = np.ptp(pts, axis=0) + 1.0
                boxes.append(TrackedBox(k, center, size, np.zeros(3), vel))
        for _ in range(int(rng.integers(num_clutter[0], num_clutter[1] + 1))):
            c = (int(rng.integers(r_lo, r_hi + 2)), int(rng.integers(0, A)), int(rng.integers(0, E)))
            if c in used:
                continue
            used.add(c)
            scat.append(Scatterer(_snap(grid, *c, rng, jitter), np.zeros(3), rng.uniform(0.3, 1.0)))
        scene = SceneSpec(scatterers=scat, ego=ego, boxes=boxes, seed=int(seed))
        if _inside_window(scene, cfg) and _inside_window(advance_scene(scene, cfg.frame_interval), cfg):
            return scene
    raise RuntimeError("could not sample a scene inside the unambiguous window")


def _inside_window(scene: SceneSpec, cfg: RadarConfig, margin: float = 0.9) -> bool:
    pos = scene.positions()
    if not len(pos):
        return True
    rng_m = np.linalg.norm(pos, axis=1)
    v_r = np.einsum("ij,ij->i", relative_velocity(scene), pos / rng_m[:, None])
    return bool(np.all(rng_m < cfg.max_range) and np.all(np.abs(v_r) < margin * cfg.max_velocity))
