"""Point-scatterer scenes, rigid ego motion and tracked object boxes.

All coordinates are radar-centric: x forward, y left, z up. A scene stores
the state at one frame; :func:`advance_scene` moves it to the next frame's
radar coordinates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.spatial.transform import Rotation

__all__ = [
    "Scatterer", "EgoMotion", "TrackedBox", "SceneSpec", "advance_scene",
    "relative_velocity", "rigid_matrix",
]


def rigid_matrix(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """4x4 homogeneous transform from a 3x3 rotation and a translation."""
    T = np.eye(4)
    T[:3, :3] = rotation
    T[:3, 3] = translation
    return T


@dataclass
class Scatterer:
    position: np.ndarray
    velocity: np.ndarray
    reflectivity: float
    object_id: int = -1  # -1 for background clutter

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(3)
        if not self.reflectivity > 0:
            raise ValueError("reflectivity must be positive")


@dataclass
class EgoMotion:
    """Radar motion as constant rates: linear m/s and angular rad/s (rotation vector)."""

    linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=float).reshape(3)
        self.angular = np.asarray(self.angular, dtype=float).reshape(3)

    def pose_delta(self, dt: float) -> np.ndarray:
        """Pose of the next radar frame expressed in the current one (4x4)."""
        rot = Rotation.from_rotvec(self.angular * dt).as_matrix()
        return rigid_matrix(rot, self.linear * dt)


@dataclass
class TrackedBox:
    """Object bounding box with a persistent track id and constant velocity."""

    track_id: int
    center: np.ndarray
    size: np.ndarray
    rotvec: np.ndarray = field(default_factory=lambda: np.zeros(3))
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("center", "size", "rotvec", "velocity"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))

    def pose(self) -> np.ndarray:
        return rigid_matrix(Rotation.from_rotvec(self.rotvec).as_matrix(), self.center)

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        local = (np.asarray(points, dtype=float) - self.center) @ \
            Rotation.from_rotvec(self.rotvec).as_matrix()
        return np.all(np.abs(local) <= self.size / 2.0 + margin, axis=-1)


@dataclass
class SceneSpec:
    scatterers: List[Scatterer] = field(default_factory=list)
    ego: EgoMotion = field(default_factory=EgoMotion)
    boxes: List[TrackedBox] = field(default_factory=list)
    seed: int = 0
    frame: int = 0
    multipath: bool = False
    ground_height: float = 1.0
    ghost_attenuation: float = 0.3

    # -- array views -------------------------------------------------------------
    def positions(self) -> np.ndarray:
        return np.array([s.position for s in self.scatterers]).reshape(-1, 3)

    def velocities(self) -> np.ndarray:
        return np.array([s.velocity for s in self.scatterers]).reshape(-1, 3)

    def reflectivities(self) -> np.ndarray:
        return np.array([s.reflectivity for s in self.scatterers], dtype=float)

    def object_ids(self) -> np.ndarray:
        return np.array([s.object_id for s in self.scatterers], dtype=int)

    def radiating(self) -> tuple:
        """(positions, relative velocities, amplitudes) including multipath ghosts."""
        pos, vel, amp = self.positions(), relative_velocity(self), self.reflectivities()
        if self.multipath and len(pos):
            ghost = pos.copy()
            ghost[:, 2] = -2.0 * self.ground_height - pos[:, 2]
            gvel = vel.copy()
            gvel[:, 2] = -gvel[:, 2]
            pos = np.concatenate([pos, ghost])
            vel = np.concatenate([vel, gvel])
            amp = np.concatenate([amp, amp * self.ghost_attenuation])
        return pos, vel, amp

    # -- JSON --------------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "frame": int(self.frame),
            "multipath": bool(self.multipath),
            "ground_height": float(self.ground_height),
            "ghost_attenuation": float(self.ghost_attenuation),
            "ego": {"linear": self.ego.linear.tolist(), "angular": self.ego.angular.tolist()},
            "scatterers": [
                {"position": s.position.tolist(), "velocity": s.velocity.tolist(),
                 "reflectivity": float(s.reflectivity), "object_id": int(s.object_id)}
                for s in self.scatterers
            ],
            "boxes": [
                {"track_id": int(b.track_id), "center": b.center.tolist(), "size": b.size.tolist(),
                 "rotvec": b.rotvec.tolist(), "velocity": b.velocity.tolist()}
                for b in self.boxes
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        try:
            return cls(
                scatterers=[Scatterer(**s) for s in d.get("scatterers", [])],
                ego=EgoMotion(**d.get("ego", {})),
                boxes=[TrackedBox(**b) for b in d.get("boxes", [])],
                seed=int(d.get("seed", 0)),
                frame=int(d.get("frame", 0)),
                multipath=bool(d.get("multipath", False)),
                ground_height=float(d.get("ground_height", 1.0)),
                ghost_attenuation=float(d.get("ghost_attenuation", 0.3)),
            )
        except TypeError as exc:
            raise ValueError(f"invalid scene document: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SceneSpec":
        return cls.from_dict(json.loads(text))


def relative_velocity(scene: SceneSpec) -> np.ndarray:
    """Instantaneous scatterer velocity seen from the moving radar (N, 3)."""
    pos = scene.positions()
    return scene.velocities() - scene.ego.linear - np.cross(scene.ego.angular, pos)


def advance_scene(scene: SceneSpec, dt: float, frames: Optional[int] = 1) -> SceneSpec:
    """Move every scatterer by velocity * dt, then re-express it in the new radar frame.

    The new radar pose relative to the old one is ``(R_e, t_e)`` from the ego
    rates, so a world-fixed point ``p`` appears at ``R_e^T (p - t_e)``.
    """
    if dt == 0:
        return replace(scene, scatterers=list(scene.scatterers), boxes=list(scene.boxes))
    T = scene.ego.pose_delta(dt)
    R, t = T[:3, :3], T[:3, 3]
    scatterers = [
        Scatterer((s.position + s.velocity * dt - t) @ R, s.velocity @ R, s.reflectivity, s.object_id)
        for s in scene.scatterers
    ]
    boxes = []
    for b in scene.boxes:
        rot = R.T @ Rotation.from_rotvec(b.rotvec).as_matrix()
        boxes.append(TrackedBox(b.track_id, (b.center + b.velocity * dt - t) @ R, b.size,
                                Rotation.from_matrix(rot).as_rotvec(), b.velocity @ R))
    # the ego rates are body-frame quantities and carry over unchanged
    return replace(scene, scatterers=scatterers, boxes=boxes, frame=scene.frame + (frames or 1))
