"""Ordered-statistic CFAR along the range axis of a Doppler-collapsed volume."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

__all__ = ["CfarConfig", "os_cfar_threshold_factor", "os_cfar_pfa", "os_cfar_detect"]

ALPHA_MAX = 1e6


@dataclass(frozen=True)
class CfarConfig:
    num_background: int = 4  # per side
    num_guard: int = 1       # per side
    pfa: float = 1e-6
    rank: Optional[int] = None  # k-th smallest background cell, 1-based

    def __post_init__(self):
        if not 0.0 < self.pfa < 1.0:
            raise ValueError("pfa must lie in (0, 1)")
        if self.num_background < 1 or self.num_guard < 0:
            raise ValueError("need at least one background cell per side")
        if self.rank is not None and not 1 <= self.rank <= self.total_background:
            raise ValueError(f"rank must lie in [1, {self.total_background}]")

    @property
    def total_background(self) -> int:
        return 2 * self.num_background

    @property
    def k(self) -> int:
        return self.rank if self.rank is not None else default_rank(self.total_background)


def default_rank(n: int) -> int:
    return max(1, math.ceil(0.75 * n))


def os_cfar_pfa(alpha: float, n: int, k: int) -> float:
    """False-alarm probability prod_{i<k} (n - i) / (n - i + alpha) for exponential noise."""
    out = 1.0
    for i in range(k):
        out *= (n - i) / (n - i + alpha)
    return out


@lru_cache(maxsize=256)
def _solve_alpha(n: int, k: int, pfa: float) -> float:
    lo, hi = 0.0, ALPHA_MAX
    if os_cfar_pfa(hi, n, k) > pfa:
        raise ValueError(f"no threshold factor in (0, {ALPHA_MAX:g}) reaches pfa={pfa:g} "
                         f"with N={n}, k={k}")
    # the false-alarm rate decreases monotonically in alpha
    while hi - lo > 1e-12 * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if os_cfar_pfa(mid, n, k) > pfa:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def os_cfar_threshold_factor(cfg: CfarConfig, n: Optional[int] = None,
                             k: Optional[int] = None) -> float:
    """Scaling factor alpha such that the OS-CFAR false-alarm rate equals ``cfg.pfa``."""
    n = cfg.total_background if n is None else n
    k = cfg.k if k is None else k
    return _solve_alpha(int(n), int(k), float(cfg.pfa))


def _window_indices(R: int, cfg: CfarConfig):
    """Background indices per range cell (truncated at the borders)."""
    out = []
    for r in range(R):
        lead = range(max(0, r - cfg.num_guard - cfg.num_background), max(0, r - cfg.num_guard))
        lag = range(min(R, r + cfg.num_guard + 1), min(R, r + cfg.num_guard + cfg.num_background + 1))
        out.append(np.array(list(lead) + list(lag), dtype=int))
    return out


def os_cfar_detect(power: np.ndarray, cfg: CfarConfig) -> np.ndarray:
    """Detection mask (R, A, E) for a non-negative (R, A, E) power volume.

    Each cell compares against the k-th smallest of its range neighbours.
    Border cells with only N' < N background cells use k' = ceil(k N' / N)
    and the threshold factor solved for (N', k').
    """
    power = np.asarray(power, dtype=np.float64)
    if power.ndim != 3:
        raise ValueError("expected a 3-D (R, A, E) power volume")
    if np.any(power < 0):
        raise ValueError("power must be non-negative")
    R = power.shape[0]
    mask = np.zeros(power.shape, dtype=bool)
    n_full, k_full = cfg.total_background, cfg.k
    groups = {}
    for r, idx in enumerate(_window_indices(R, cfg)):
        groups.setdefault(len(idx), []).append((r, idx))
    for n, members in groups.items():
        if n == 0:
            continue
        k = max(1, min(n, math.ceil(k_full * n / n_full)))
        alpha = os_cfar_threshold_factor(cfg, n, k)
        rows = np.array([r for r, _ in members])
        idx = np.stack([i for _, i in members])                 # (m, n)
        windows = power[idx]                                    # (m, n, A, E)
        stat = np.partition(windows, k - 1, axis=1)[:, k - 1]   # (m, A, E)
        mask[rows] = power[rows] > alpha * stat
    return mask
