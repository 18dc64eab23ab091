"""Polar (range, azimuth, elevation) voxel grid and its Cartesian geometry.

Angle axes come in two flavours. ``ANGLE_DEGREES`` spaces bins uniformly in
degrees (the layout of beamformed datasets). ``ANGLE_SINE`` spaces bins
uniformly in direction cosine, which is what an FFT across a uniform array
produces: the azimuth index measures u = y/r and the elevation index w = z/r.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["PolarGrid", "ANGLE_DEGREES", "ANGLE_SINE", "GeometryVolumes"]

ANGLE_DEGREES = 0
ANGLE_SINE = 1


@dataclass(frozen=True)
class PolarGrid:
    range_min: float
    range_step: float
    num_range: int
    az_start: float
    az_step: float
    num_az: int
    el_start: float
    el_step: float
    num_el: int
    doppler_start: float
    doppler_step: float
    num_doppler: int
    dt: float
    angle_mode: int = ANGLE_SINE

    def __post_init__(self):
        if min(self.num_range, self.num_az, self.num_el, self.num_doppler) < 1:
            raise ValueError("grid extents must be positive")
        if self.range_step <= 0 or self.az_step <= 0 or self.el_step <= 0:
            raise ValueError("grid steps must be positive")
        if self.angle_mode not in (ANGLE_DEGREES, ANGLE_SINE):
            raise ValueError(f"unknown angle mode {self.angle_mode}")

    # -- axes ------------------------------------------------------------------
    @property
    def spatial_shape(self) -> tuple:
        return (self.num_range, self.num_az, self.num_el)

    @property
    def shape(self) -> tuple:
        return (self.num_doppler,) + self.spatial_shape

    def ranges(self) -> np.ndarray:
        return self.range_min + self.range_step * np.arange(self.num_range)

    def az_values(self) -> np.ndarray:
        return self.az_start + self.az_step * np.arange(self.num_az)

    def el_values(self) -> np.ndarray:
        return self.el_start + self.el_step * np.arange(self.num_el)

    def doppler_axis(self) -> np.ndarray:
        return self.doppler_start + self.doppler_step * np.arange(self.num_doppler)

    def with_updates(self, **kw) -> "PolarGrid":
        return replace(self, **kw)

    # -- geometry --------------------------------------------------------------
    def direction(self, a, e) -> np.ndarray:
        """Unit line-of-sight vectors (..., 3) at continuous angle indices."""
        av = self.az_start + self.az_step * np.asarray(a, dtype=float)
        ev = self.el_start + self.el_step * np.asarray(e, dtype=float)
        if self.angle_mode == ANGLE_SINE:
            x = np.sqrt(np.clip(1.0 - av * av - ev * ev, 0.0, None))
            d = np.stack(np.broadcast_arrays(x, av, ev), axis=-1)
            return d / np.linalg.norm(d, axis=-1, keepdims=True)
        az, el = np.deg2rad(av), np.deg2rad(ev)
        return np.stack(np.broadcast_arrays(np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                                            np.sin(el)), axis=-1)

    def index_to_cartesian(self, idx) -> np.ndarray:
        """Continuous (r, a, e) indices (..., 3) -> Cartesian meters (..., 3)."""
        idx = np.asarray(idx, dtype=float)
        rng = self.range_min + self.range_step * idx[..., 0]
        return rng[..., None] * self.direction(idx[..., 1], idx[..., 2])

    def cartesian_to_index(self, xyz) -> np.ndarray:
        """Cartesian meters (..., 3) -> continuous (r, a, e) indices (..., 3)."""
        xyz = np.asarray(xyz, dtype=float)
        rng = np.linalg.norm(xyz, axis=-1)
        safe = np.where(rng > 0, rng, 1.0)
        if self.angle_mode == ANGLE_SINE:
            av = xyz[..., 1] / safe
            ev = xyz[..., 2] / safe
        else:
            av = np.rad2deg(np.arctan2(xyz[..., 1], xyz[..., 0]))
            ev = np.rad2deg(np.arcsin(np.clip(xyz[..., 2] / safe, -1.0, 1.0)))
        return np.stack([(rng - self.range_min) / self.range_step,
                         (av - self.az_start) / self.az_step,
                         (ev - self.el_start) / self.el_step], axis=-1)

    def voxel_index_grid(self) -> np.ndarray:
        """Integer voxel indices as floats, shape (R, A, E, 3)."""
        return np.stack(np.meshgrid(np.arange(self.num_range), np.arange(self.num_az),
                                    np.arange(self.num_el), indexing="ij"), axis=-1).astype(float)

    def voxel_centers(self) -> np.ndarray:
        """Cartesian voxel centers, shape (R, A, E, 3)."""
        return self.index_to_cartesian(self.voxel_index_grid())

    def jacobian(self, idx) -> np.ndarray:
        """d(Cartesian)/d(index) at continuous indices (..., 3) -> (..., 3, 3).

        Column j holds the metric displacement of one bin step along axis j.
        """
        idx = np.asarray(idx, dtype=float)
        rng = self.range_min + self.range_step * idx[..., 0]
        av = self.az_start + self.az_step * idx[..., 1]
        ev = self.el_start + self.el_step * idx[..., 2]
        d = self.direction(idx[..., 1], idx[..., 2])
        if self.angle_mode == ANGLE_SINE:
            x = np.maximum(d[..., 0], 1e-9)
            zero = np.zeros_like(x)
            da = np.stack([-av / x, np.ones_like(x), zero], axis=-1) * self.az_step
            de = np.stack([-ev / x, zero, np.ones_like(x)], axis=-1) * self.el_step
        else:
            az, el = np.deg2rad(av), np.deg2rad(ev)
            da = np.stack([-np.cos(el) * np.sin(az), np.cos(el) * np.cos(az),
                           np.zeros_like(az)], axis=-1) * np.deg2rad(self.az_step)
            de = np.stack([-np.sin(el) * np.cos(az), -np.sin(el) * np.sin(az),
                           np.cos(el)], axis=-1) * np.deg2rad(self.el_step)
        cols = [d * self.range_step, rng[..., None] * da, rng[..., None] * de]
        return np.stack(cols, axis=-1)

    def bins_to_meters(self, flow_bins: np.ndarray) -> np.ndarray:
        """Bin-unit flow (3, R, A, E) -> Cartesian displacement (3, R, A, E).

        Uses the local linearisation of the polar map at each voxel center:
        one range bin is ``range_step`` meters along the line of sight and one
        angle bin is roughly ``r * angle_step`` meters across it.
        """
        jac = self.jacobian(self.voxel_index_grid())
        f = np.moveaxis(np.asarray(flow_bins, dtype=float), 0, -1)
        return np.moveaxis(np.einsum("...ij,...j->...i", jac, f), -1, 0)

    def meters_to_bins(self, centers_idx, disp) -> np.ndarray:
        """Exact bin displacement of points at ``centers_idx`` moved by ``disp`` meters."""
        start = self.index_to_cartesian(np.asarray(centers_idx, dtype=float))
        # differencing the same inverse map keeps zero displacement exactly zero
        return self.cartesian_to_index(start + np.asarray(disp, dtype=float)) - \
            self.cartesian_to_index(start)

    def angles_degrees(self) -> tuple:
        """Azimuth / elevation of each (a, e) column in degrees, each (A, E)."""
        d = self.direction(*np.meshgrid(np.arange(self.num_az), np.arange(self.num_el),
                                        indexing="ij"))
        az = np.rad2deg(np.arctan2(d[..., 1], d[..., 0]))
        el = np.rad2deg(np.arcsin(np.clip(d[..., 2], -1.0, 1.0)))
        return az, el

    # -- serialisation -----------------------------------------------------------
    def to_array(self) -> np.ndarray:
        """Fixed 10-float layout used by the binary volume format."""
        return np.array([self.range_min, self.range_step, self.az_start, self.az_step,
                         self.el_start, self.el_step, self.doppler_start, self.doppler_step,
                         self.dt, float(self.angle_mode)], dtype="<f8")

    @classmethod
    def from_array(cls, arr, extents) -> "PolarGrid":
        d, r, a, e = (int(x) for x in extents)
        arr = [float(x) for x in arr]
        return cls(range_min=arr[0], range_step=arr[1], num_range=r, az_start=arr[2],
                   az_step=arr[3], num_az=a, el_start=arr[4], el_step=arr[5], num_el=e,
                   doppler_start=arr[6], doppler_step=arr[7], num_doppler=d, dt=arr[8],
                   angle_mode=int(round(arr[9])))

    @classmethod
    def full_scale(cls, dt: float = 0.1, doppler_step: float = 1.0) -> "PolarGrid":
        """Preprocessed full-scale layout: 64 x 128 x 48 x 32 in degrees."""
        return cls(range_min=0.0, range_step=0.46, num_range=128, az_start=-47.0, az_step=2.0,
                   num_az=48, el_start=-15.0, el_step=1.0, num_el=32,
                   doppler_start=-32 * doppler_step, doppler_step=doppler_step, num_doppler=64,
                   dt=dt, angle_mode=ANGLE_DEGREES)


@dataclass
class GeometryVolumes:
    """Per-voxel polar coordinates, Cartesian centers and line-of-sight vectors."""

    polar: np.ndarray      # (3, R, A, E): range m, azimuth deg, elevation deg
    cartesian: np.ndarray  # (3, R, A, E) meters
    direction: np.ndarray  # (3, R, A, E) unit vectors

    @classmethod
    def from_grid(cls, grid: PolarGrid) -> "GeometryVolumes":
        R, A, E = grid.spatial_shape
        idx = grid.voxel_index_grid()
        cart = np.moveaxis(grid.index_to_cartesian(idx), -1, 0)
        dirs = grid.direction(idx[..., 1], idx[..., 2])
        az, el = grid.angles_degrees()
        polar = np.stack([np.broadcast_to(grid.ranges()[:, None, None], (R, A, E)),
                          np.broadcast_to(az[None], (R, A, E)),
                          np.broadcast_to(el[None], (R, A, E))])
        return cls(polar=polar, cartesian=cart, direction=np.moveaxis(dirs, -1, 0))
