import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tessflow.cfar import CfarConfig, os_cfar_detect, os_cfar_pfa, os_cfar_threshold_factor


def brute_force_cfar(power, cfg):
    R, A, E = power.shape
    n_full, k_full = cfg.total_background, cfg.k
    mask = np.zeros(power.shape, dtype=bool)
    for a in range(A):
        for e in range(E):
            for r in range(R):
                cells = []
                for j in range(R):
                    gap = abs(j - r)
                    if cfg.num_guard < gap <= cfg.num_guard + cfg.num_background:
                        cells.append(power[j, a, e])
                n = len(cells)
                if n == 0:
                    continue
                k = max(1, min(n, math.ceil(k_full * n / n_full)))
                alpha = os_cfar_threshold_factor(cfg, n, k)
                stat = sorted(cells)[k - 1]
                mask[r, a, e] = power[r, a, e] > alpha * stat
    return mask


def test_default_rank_and_full_scale_config():
    cfg = CfarConfig()
    assert (cfg.num_background, cfg.num_guard, cfg.pfa) == (4, 1, 1e-6)
    assert cfg.total_background == 8 and cfg.k == 6


def test_invalid_config():
    with pytest.raises(ValueError):
        CfarConfig(pfa=0.0)
    with pytest.raises(ValueError):
        CfarConfig(pfa=1.0)
    with pytest.raises(ValueError):
        CfarConfig(rank=9)


def test_alpha_limit_pfa_to_one():
    alphas = [os_cfar_threshold_factor(CfarConfig(pfa=p)) for p in (0.5, 0.9, 0.99, 0.999999)]
    assert all(a > b for a, b in zip(alphas, alphas[1:]))
    assert alphas[-1] < 1e-5


def test_alpha_satisfies_product_formula():
    cfg = CfarConfig(num_background=4, rank=6, pfa=1e-2)
    alpha = os_cfar_threshold_factor(cfg)
    prod = 1.0
    for i in range(6):
        prod *= (8 - i) / (8 - i + alpha)
    assert abs(prod - 1e-2) < 1e-10
    assert os_cfar_pfa(alpha, 8, 6) == pytest.approx(1e-2, abs=1e-10)


def test_alpha_no_root():
    with pytest.raises(ValueError):
        os_cfar_threshold_factor(CfarConfig(num_background=1, rank=1, pfa=1e-12))


def test_monte_carlo_false_alarm_rate():
    cfg = CfarConfig(pfa=1e-2)
    alpha = os_cfar_threshold_factor(cfg)
    rng = np.random.default_rng(0)
    trials = 10 ** 6
    cut = rng.exponential(size=trials)
    background = rng.exponential(size=(trials, cfg.total_background))
    stat = np.partition(background, cfg.k - 1, axis=1)[:, cfg.k - 1]
    rate = np.mean(cut > alpha * stat)
    sigma = math.sqrt(1e-2 * (1 - 1e-2) / trials)
    assert abs(rate - 1e-2) < 3 * sigma


def test_flat_field_no_detections():
    assert not os_cfar_detect(np.full((32, 4, 3), 5.0), CfarConfig(pfa=1e-2)).any()


def test_strong_cell_detected():
    rng = np.random.default_rng(1)
    p = rng.exponential(size=(32, 2, 2))
    p[15, 1, 0] = 1e4  # 40 dB above the unit noise floor
    assert os_cfar_detect(p, CfarConfig())[15, 1, 0]


@pytest.mark.parametrize("cfg", [CfarConfig(), CfarConfig(pfa=1e-2), CfarConfig(3, 2, 0.05, rank=2)])
def test_matches_brute_force(cfg):
    p = np.random.default_rng(2).exponential(size=(20, 3, 2))
    p[[3, 9, 17], [0, 1, 2 % 3], [1, 0, 1]] *= 50
    assert np.array_equal(os_cfar_detect(p, cfg), brute_force_cfar(p, cfg))


@pytest.mark.parametrize("c", [2.0, 0.125, 3.7, 1e5])
def test_scale_invariance(c):
    p = np.random.default_rng(3).exponential(size=(32, 12, 8))
    cfg = CfarConfig(pfa=1e-2)
    assert np.array_equal(os_cfar_detect(p, cfg), os_cfar_detect(c * p, cfg))


@given(st.floats(1e-4, 0.5), st.floats(1.01, 1.9))
@settings(max_examples=20, deadline=None)
def test_raising_pfa_never_removes_detections(pfa, factor):
    p = np.random.default_rng(4).exponential(size=(24, 3, 2))
    low = os_cfar_detect(p, CfarConfig(pfa=pfa))
    high = os_cfar_detect(p, CfarConfig(pfa=min(0.99, pfa * factor)))
    assert np.all(high[low])


def test_rejects_negative_power():
    with pytest.raises(ValueError):
        os_cfar_detect(-np.ones((4, 1, 1)), CfarConfig())
