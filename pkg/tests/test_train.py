"""Optimiser, schedule and training-loop behaviour."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tessflow import autodiff as ad
from tessflow.autodiff.nn import Parameter
from tessflow.losses import LossNormalizer
from tessflow.train import Adam, OptimConfig, adam_step, lr_schedule, shift_image


def test_adam_zero_gradient_is_fixed_point():
    p = np.array([1.0, -2.0, 3.0])
    state = {}
    for _ in range(5):
        assert adam_step([p], [np.zeros(3)], state, lr=0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])


def test_adam_minimises_quadratic():
    x = Parameter(np.array([3.0]))
    opt = Adam([x], OptimConfig(lr=0.1))
    for _ in range(200):
        opt.zero_grad()
        ad.backward(ad.sum(ad.square(x)))
        opt.step(0.1)
    assert abs(x.data[0]) < 1e-3


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=12), st.floats(1e-4, 0.5))
@settings(max_examples=50, deadline=None)
def test_adam_matches_scalar_recurrence(grads, lr):
    cfg = OptimConfig()
    p = np.array([0.7])
    state = {}
    x, m, v = 0.7, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        adam_step([p], [np.array([g])], state, lr, cfg)
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        x -= lr * (m / (1 - cfg.beta1 ** t)) / (math.sqrt(v / (1 - cfg.beta2 ** t)) + cfg.eps)
    assert p[0] == pytest.approx(x, rel=1e-12, abs=1e-12)


def test_adam_skips_non_finite_gradients():
    p = np.array([1.0, 2.0])
    state = {}
    assert not adam_step([p], [np.array([np.nan, 0.0])], state, lr=0.1)
    assert not adam_step([p], [np.array([np.inf, 0.0])], state, lr=0.1)
    np.testing.assert_array_equal(p, [1.0, 2.0])
    assert state["skipped"] == 2
    assert "m" not in state


def test_schedule_examples():
    cfg = OptimConfig(lr=1e-3, warmup_ratio=0.2)
    total = 100
    assert lr_schedule(0, 0, total, cfg) == 0.0
    assert lr_schedule(20, 0, total, cfg) == pytest.approx(1e-3)
    # epoch 4 decays the peak twice
    assert lr_schedule(20, 4, total, cfg) == pytest.approx(1e-3 * 0.81)
    assert lr_schedule(total - 1, 0, total, cfg) == pytest.approx(0.0, abs=1e-18)


@given(st.integers(1, 400), st.integers(0, 30))
@settings(max_examples=60, deadline=None)
def test_schedule_bounded_by_epoch_peak(total, epoch):
    cfg = OptimConfig()
    peak = cfg.lr * cfg.decay ** (epoch // cfg.decay_every)
    for step in range(0, total, max(total // 17, 1)):
        lr = lr_schedule(step, epoch, total, cfg)
        assert 0.0 <= lr <= peak * (1 + 1e-12)


def test_schedule_monotone_after_warmup():
    cfg = OptimConfig()
    total = 50
    vals = [lr_schedule(s, 0, total, cfg) for s in range(10, total)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


@pytest.mark.parametrize("kwargs", [dict(lr=0.0), dict(decay=1.5), dict(warmup_ratio=1.0),
                                    dict(beta1=1.0), dict(eps=0.0), dict(decay_every=0)])
def test_optim_config_validation(kwargs):
    with pytest.raises(ValueError):
        OptimConfig(**kwargs)


@given(st.integers(-3, 3), st.integers(-3, 3))
@settings(max_examples=40, deadline=None)
def test_shift_image_matches_index_shift(dy, dx):
    img = np.arange(8 * 9, dtype=float).reshape(8, 9) + 1
    out = shift_image(img, dy, dx)
    for y in range(8):
        for x in range(9):
            sy, sx = y - dy, x - dx
            expect = img[sy, sx] if 0 <= sy < 8 and 0 <= sx < 9 else 0.0
            assert out[y, x] == expect


def test_normalizer_warmup_then_ema():
    n = LossNormalizer(decay=0.5, warmup=2)
    n.update({"a": 4.0})
    assert n.divisors() == {"a": 1.0}
    n.update({"a": 2.0})
    assert n.ema["a"] == 3.0
    assert n.divisors() == {"a": 3.0}
