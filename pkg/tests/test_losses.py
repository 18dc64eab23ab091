import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tessflow import autodiff as ad
from tessflow.autodiff.gradcheck import check_grad
from tessflow.losses import (
    DivergenceError, EnergyFeature, LossNormalizer, energy_features, interior_mask, loss_ef,
    loss_rfs, loss_se, radial_velocity, total_loss,
)
from tessflow.tesseract.grid import GeometryVolumes, PolarGrid


def rng_for(name):
    return np.random.default_rng(zlib.crc32(name.encode()))


def sigmoid(x):
    if x < 0:
        z = math.exp(x)
        return z / (1.0 + z)
    return 1.0 / (1.0 + math.exp(-x))


def desk_grid(R=8, A=6, E=4):
    return PolarGrid(2.0, 1.0, R, -0.3, 0.1, A, -0.15, 0.1, E, -8.0, 1.0, 16, 0.2)


def fractional_flow(rng, shape, span=2):
    """Random flow whose components stay away from integer kinks of trilinear sampling."""
    whole = rng.integers(-span, span, size=shape)
    return whole + rng.uniform(0.1, 0.9, size=shape)


# ---------------------------------------------------------------- energy features


def test_flat_tesseract_gives_half_target():
    feat = energy_features(np.full((16, 8, 6, 4), 3.7))
    np.testing.assert_allclose(feat.energy, 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(feat.noise, feat.energy, rtol=0, atol=1e-15)
    np.testing.assert_allclose(feat.target(), 0.5, atol=1e-15)


def test_hot_voxel_against_window_arithmetic():
    R, A, E = 8, 16, 12
    power = np.ones((16, R, A, E))
    hot = (4, 8, 6)
    power[(slice(None),) + hot] = 100.0
    feat = energy_features(power)
    # floor normalises to 1 (the hot voxel is far below the 1% tail), hot voxel to 100
    local_hot = (5 * 5 * 3 - 1 + 100.0) / (5 * 5 * 3)
    range_hot = (A * E - 1 + 100.0) / (A * E)
    tau_hot = 0.5 * (local_hot + range_hot)
    assert feat.energy[hot] == pytest.approx(100.0)
    assert feat.noise[hot] == pytest.approx(tau_hot, rel=1e-12)
    assert feat.energy[hot] - feat.noise[hot] > 0
    far_same_range = (4, 0, 0)
    assert feat.noise[far_same_range] == pytest.approx(0.5 * (1.0 + range_hot), rel=1e-12)
    assert feat.energy[far_same_range] - feat.noise[far_same_range] < 0


def test_energy_scale_invariance():
    power = rng_for("scale").exponential(size=(16, 8, 6, 4))
    a = energy_features(power, frame_id=2)
    b = energy_features(power * 1234.5, frame_id=2)
    np.testing.assert_allclose(a.energy, b.energy, rtol=1e-12)
    np.testing.assert_allclose(a.noise, b.noise, rtol=1e-12)


def test_energy_features_nonnegative_and_finite():
    power = rng_for("nonneg").exponential(size=(16, 8, 6, 4))
    power[:, 0] = 0.0
    feat = energy_features(power)
    for x in (feat.energy, feat.noise):
        assert np.all(np.isfinite(x)) and x.min() >= 0


# ---------------------------------------------------------------- segmentation energy loss


def _features(rng, shape=(8, 6, 4)):
    e = rng.exponential(size=shape)
    return EnergyFeature(e, rng.uniform(0.5, 1.5, shape))


def test_loss_se_fixed_point():
    feat = _features(rng_for("se-fixed"))
    seg = feat.target()
    loss = loss_se(seg, np.zeros((3,) + seg.shape), feat, feat)
    assert float(loss.data) == 0.0


def test_loss_se_zero_mask():
    rng = rng_for("se-zero")
    src, tgt = _features(rng), _features(rng)
    flow = rng.normal(size=(3, 8, 6, 4))
    loss = loss_se(np.zeros((8, 6, 4)), flow, src, tgt)
    assert float(loss.data) == pytest.approx(src.target().mean(), rel=1e-14)


def test_loss_se_gradient():
    rng = rng_for("se-grad")
    src, tgt = _features(rng), _features(rng)
    seg = ad.Tensor(rng.uniform(0.05, 0.95, (8, 6, 4)), requires_grad=True)
    flow = ad.Tensor(fractional_flow(rng, (3, 8, 6, 4)), requires_grad=True)
    assert check_grad(lambda m, f: loss_se(m, f, src, tgt), [seg, flow]) < 1e-4


def test_loss_se_shape_mismatch():
    feat = _features(rng_for("se-shape"))
    with pytest.raises(ValueError):
        loss_se(np.zeros((8, 6, 3)), np.zeros((3, 8, 6, 3)), feat, feat)


# ---------------------------------------------------------------- energy flow loss


def test_loss_ef_identity():
    e = rng_for("ef-id").exponential(size=(8, 6, 4))
    assert float(loss_ef(e, e, np.zeros((3, 8, 6, 4))).data) == 0.0


def test_loss_ef_range_shift_interior_zero():
    e_src = rng_for("ef-shift").exponential(size=(8, 6, 4))
    e_tgt = np.zeros_like(e_src)
    e_tgt[1:] = e_src[:-1]
    flow = np.zeros((3, 8, 6, 4))
    flow[0] = 1.0
    assert abs(float(loss_ef(e_src, e_tgt, flow, interior=True).data)) < 1e-10
    # the last range row samples past the grid and is excluded, not zero
    assert float(loss_ef(e_src, e_tgt, flow).data) > 0


def test_loss_ef_interior_matches_recomputation():
    rng = rng_for("ef-interior")
    e_src, e_tgt = rng.exponential(size=(2, 8, 6, 4))
    flow = rng.normal(0, 1.5, (3, 8, 6, 4))
    mask = interior_mask(flow)
    got = float(loss_ef(e_src, e_tgt, flow, interior=True).data)
    full = (e_src * np.abs(e_src - ad.warp(e_tgt, flow).data))
    assert got == pytest.approx(full[mask].mean(), rel=1e-13)
    assert 0 < mask.sum() < mask.size


def test_loss_ef_gradient():
    rng = rng_for("ef-grad")
    e_src, e_tgt = rng.exponential(size=(2, 8, 6, 4))
    flow = ad.Tensor(fractional_flow(rng, (3, 8, 6, 4)), requires_grad=True)
    assert check_grad(lambda f: loss_ef(e_src, e_tgt, f), [flow]) < 1e-4


# ---------------------------------------------------------------- radial flow consistency


def test_loss_rfs_static_voxel_target():
    grid = desk_grid()
    geo = GeometryVolumes.from_grid(grid)
    beta = grid.doppler_step ** 2
    zeros = np.zeros(grid.spatial_shape)
    loss = loss_rfs(np.ones(grid.spatial_shape), np.zeros((3,) + grid.spatial_shape), zeros,
                    geo, 0.2, 4.0, beta)
    assert float(loss.data) == pytest.approx(1 - sigmoid(4.0 * beta), rel=1e-14)


def test_loss_rfs_doppler_consistent_flow():
    grid = desk_grid()
    geo = GeometryVolumes.from_grid(grid)
    dt = 0.2
    R = grid.num_range
    flow = np.zeros((3,) + grid.spatial_shape)
    flow[0, : R - 2] = 1.5                       # radial motion that stays inside the grid
    velocity = flow[0] * grid.range_step / dt
    delta = velocity - radial_velocity(flow, geo, dt).data
    assert np.max(np.abs(delta)) < 1e-10
    alpha, beta = 4.0, grid.doppler_step ** 2
    loss = loss_rfs(np.full(grid.spatial_shape, sigmoid(alpha * beta)), flow, velocity, geo, dt,
                    alpha, beta)
    assert float(loss.data) < 1e-10


def _scalar_rfs(seg, flow, velocity, grid, dt, alpha, beta):
    R, A, E = grid.spatial_shape
    total = 0.0
    for r in range(R):
        for a in range(A):
            for e in range(E):
                src = grid.index_to_cartesian(np.array([r, a, e], dtype=float))
                # trilinear sample of the Cartesian centre volume at the displaced index
                p = [r + flow[0, r, a, e], a + flow[1, r, a, e], e + flow[2, r, a, e]]
                p = [min(max(c, 0.0), n - 1) for c, n in zip(p, (R, A, E))]
                lo = [min(int(math.floor(c)), n - 2) for c, n in zip(p, (R, A, E))]
                fr = [c - l for c, l in zip(p, lo)]
                moved = np.zeros(3)
                for i in (0, 1):
                    for j in (0, 1):
                        for k in (0, 1):
                            w = ((fr[0] if i else 1 - fr[0]) * (fr[1] if j else 1 - fr[1])
                                 * (fr[2] if k else 1 - fr[2]))
                            idx = np.array([lo[0] + i, lo[1] + j, lo[2] + k], dtype=float)
                            moved += w * grid.index_to_cartesian(idx)
                direction = src / np.linalg.norm(src)
                v = float(np.dot(moved - src, direction)) / dt
                d = velocity[r, a, e] - v
                total += abs(seg[r, a, e] - sigmoid(alpha * (beta - d * d)))
    return total / (R * A * E)


def test_loss_rfs_scalar_oracle():
    rng = rng_for("rfs-oracle")
    grid = desk_grid(6, 4, 3)
    geo = GeometryVolumes.from_grid(grid)
    seg = rng.uniform(size=grid.spatial_shape)
    flow = rng.normal(0, 1.0, (3,) + grid.spatial_shape)
    velocity = rng.normal(0, 3.0, grid.spatial_shape)
    got = float(loss_rfs(seg, flow, velocity, geo, 0.2, 4.0, 1.0).data)
    assert abs(got - _scalar_rfs(seg, flow, velocity, grid, 0.2, 4.0, 1.0)) < 1e-12


def test_loss_rfs_gradient():
    rng = rng_for("rfs-grad")
    grid = desk_grid()
    geo = GeometryVolumes.from_grid(grid)
    seg = ad.Tensor(rng.uniform(0.05, 0.95, grid.spatial_shape), requires_grad=True)
    flow = ad.Tensor(fractional_flow(rng, (3,) + grid.spatial_shape, 1), requires_grad=True)
    velocity = rng.normal(0, 1.0, grid.spatial_shape)
    fn = lambda m, f: loss_rfs(m, f, velocity, geo, 0.2, 4.0, 1.0)  # noqa: E731
    assert check_grad(fn, [seg, flow]) < 1e-4


@pytest.mark.parametrize("dt", [0.0, -0.1])
def test_loss_rfs_rejects_nonpositive_dt(dt):
    grid = desk_grid()
    geo = GeometryVolumes.from_grid(grid)
    z = np.zeros(grid.spatial_shape)
    with pytest.raises(ValueError):
        loss_rfs(z, np.zeros((3,) + z.shape), z, geo, dt)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_losses_nonnegative(seed):
    rng = np.random.default_rng(seed)
    grid = desk_grid(6, 4, 3)
    geo = GeometryVolumes.from_grid(grid)
    shape = grid.spatial_shape
    seg = rng.uniform(size=shape)
    flow = rng.normal(0, 2.0, (3,) + shape)
    src, tgt = _features(rng, shape), _features(rng, shape)
    assert float(loss_se(seg, flow, src, tgt).data) >= 0
    assert float(loss_ef(src.energy, tgt.energy, flow).data) >= 0
    assert float(loss_rfs(seg, flow, rng.normal(size=shape), geo, 0.2).data) >= 0


# ---------------------------------------------------------------- normalisation


def test_unit_divisors_give_plain_sum():
    terms = {"se": ad.Tensor(0.3), "ef": ad.Tensor(1.25), "rfs": ad.Tensor(0.5)}
    total, report = total_loss(terms, LossNormalizer())
    assert float(total.data) == 0.3 + 1.25 + 0.5
    assert report.weights == {"se": 1.0, "ef": 1.0, "rfs": 1.0}


def test_steady_state_terms_sum_to_three():
    norm = LossNormalizer()
    for _ in range(500):
        total, _ = total_loss({"a": ad.Tensor(2.0), "b": ad.Tensor(0.01), "c": ad.Tensor(7.0)}, norm)
    assert float(total.data) == pytest.approx(3.0, rel=1e-12)


def test_ema_matches_scalar_recurrence():
    rng = rng_for("ema")
    values = rng.exponential(size=(40, 2))
    norm = LossNormalizer()
    ema = None
    for step, (x, y) in enumerate(values):
        total, report = total_loss({"x": ad.Tensor(x), "y": ad.Tensor(y)}, norm)
        div = [1.0, 1.0] if step < 10 else list(ema)
        assert report.weights == {"x": 1.0 / div[0], "y": 1.0 / div[1]}
        assert float(total.data) == pytest.approx(x / div[0] + y / div[1], rel=1e-15)
        ema = [x, y] if ema is None else [0.99 * ema[0] + (1 - 0.99) * x,
                                          0.99 * ema[1] + (1 - 0.99) * y]
        assert norm.ema == {"x": ema[0], "y": ema[1]}


def test_normalizer_excluded_from_gradient():
    norm = LossNormalizer(warmup=0)
    norm.update({"a": 4.0})
    x = ad.Tensor(np.array(2.0), requires_grad=True)
    total, _ = total_loss({"a": x * x}, norm, update=False)
    ad.backward(total)
    assert x.grad == pytest.approx(2 * 2.0 / 4.0)


def test_non_finite_term_aborts():
    norm = LossNormalizer()
    with pytest.raises(DivergenceError):
        total_loss({"a": ad.Tensor(1.0), "b": ad.Tensor(np.nan)}, norm)
    assert norm.steps == 0 and norm.ema == {}
