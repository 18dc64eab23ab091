"""3-D reference points from the three plane flows at each pyramid scale."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..autodiff.sampling import identity_grid

__all__ = ["reference_points", "plane_flows_to_volume"]


def plane_flows_to_volume(f_ra: np.ndarray, f_re: np.ndarray, f_ae: np.ndarray) -> np.ndarray:
    """Average each coordinate over the two planes that observe it.

    f_ra: (2, R, A) components (r, a); f_re: (2, R, E) components (r, e);
    f_ae: (2, A, E) components (a, e). Each plane flow is broadcast along its
    missing axis, giving a (3, R, A, E) displacement volume.
    """
    R, A = f_ra.shape[1:]
    E = f_re.shape[2]
    if f_re.shape[1] != R or f_ae.shape[1:] != (A, E):
        raise ValueError("plane flow extents are inconsistent")
    dr = 0.5 * (f_ra[0][:, :, None] + f_re[0][:, None, :])
    da = 0.5 * (f_ra[1][:, :, None] + f_ae[0][None, :, :])
    de = 0.5 * (f_re[1][:, None, :] + f_ae[1][None, :, :])
    return np.stack([dr, da, de])


def reference_points(ra: Sequence[np.ndarray], re: Sequence[np.ndarray],
                     ae: Sequence[np.ndarray]) -> list:
    """Per level l: identity grid of that level plus the averaged plane flows."""
    if not (len(ra) == len(re) == len(ae) == 3):
        raise ValueError("plane flows at all three scales are required")
    out = []
    for f_ra, f_re, f_ae in zip(ra, re, ae):
        disp = plane_flows_to_volume(np.asarray(f_ra), np.asarray(f_re), np.asarray(f_ae))
        out.append(identity_grid(disp.shape[1:]) + disp)
    return out
