import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from tessflow.sim import (
    AdcCube, EgoMotion, RadarConfig, Scatterer, SceneSpec, TrackedBox, WindowError, advance_scene,
    cluster_points, ground_truth, random_scene, read_adc, simulate_adc, write_adc,
)
from tessflow.formats import FormatError
from tessflow.tesseract import preprocess_grid, raw_grid


@pytest.fixture(scope="module")
def cfg():
    return RadarConfig.desk(noise_power=0.0)


@pytest.fixture(scope="module")
def grid(cfg):
    return preprocess_grid(raw_grid(cfg))


def test_config_derived_quantities(cfg):
    assert cfg.range_resolution == pytest.approx(1.0, rel=1e-9)
    assert cfg.max_velocity == pytest.approx(cfg.wavelength / (4 * cfg.chirp_duration))
    assert cfg.num_channels == cfg.az_raw * cfg.el_raw == 280
    assert cfg.virtual_positions().shape == (280, 3)
    back = RadarConfig.from_dict(json.loads(cfg.to_json()))
    assert np.array_equal(back.tx_positions, cfg.tx_positions)


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        RadarConfig(bandwidth=-1.0)
    with pytest.raises(ValueError):
        RadarConfig(frame_interval=0.0)


def test_empty_scene_gives_zero_cube(cfg):
    cube = simulate_adc(SceneSpec(), cfg)
    assert cube.shape == (280, 16, 64)
    assert not np.any(cube.data)


def _dirichlet(x, n):
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    nz = np.abs(np.sin(np.pi * x / n)) > 1e-12
    out[nz] = np.abs(np.sin(np.pi * x[nz]) / (n * np.sin(np.pi * x[nz] / n)))
    return out


@pytest.mark.parametrize("rng_m", [10.0, 10.3, 10.5])
def test_range_fft_peak_and_sidelobes(cfg, rng_m):
    scene = SceneSpec([Scatterer([rng_m, 0, 0], [0, 0, 0], 1.0)])
    spec = np.abs(np.fft.fft(simulate_adc(scene, cfg).data[0, 0]))
    n = cfg.num_samples
    k0 = rng_m / cfg.range_resolution
    peak = int(np.argmax(spec))
    assert abs(peak - k0) <= 0.5
    assert peak == int(np.floor(k0 + 0.5)) or abs(peak - k0) == 0.5
    # magnitudes follow the rectangular-window Dirichlet kernel
    np.testing.assert_allclose(spec / n, _dirichlet(np.arange(n) - k0, n), atol=1e-9)
    # outside the mainlobe every bin is at least 13 dB below the sinc peak
    side = spec[np.abs(np.arange(n) - k0) >= 1.5]
    assert 20 * np.log10(n / max(side.max(), 1e-300)) >= 13.0


def test_doppler_fft_bin(cfg):
    dv = cfg.velocity_resolution
    for k in (-5, -1, 0, 3, 7):
        v = k * dv
        scene = SceneSpec([Scatterer([12.0, 0, 0], [v, 0, 0], 1.0)])
        x = simulate_adc(scene, cfg).data[0, :, 12]
        spec = np.abs(np.fft.fftshift(np.fft.fft(x)))
        assert int(np.argmax(spec)) == int(round(v / dv)) + cfg.num_chirps // 2


def test_energy_conservation(cfg):
    scene = SceneSpec([Scatterer([9.3, 1.1, -0.4], [1.5, 0.2, 0], 0.7)])
    cube = simulate_adc(scene, cfg)
    expected = 0.7 ** 2 * cube.data.size
    assert abs(np.sum(np.abs(cube.data) ** 2) - expected) / expected < 1e-9


def test_window_errors(cfg):
    with pytest.raises(WindowError):
        simulate_adc(SceneSpec([Scatterer([70, 0, 0], [0, 0, 0], 1.0)]), cfg)
    with pytest.raises(WindowError):
        simulate_adc(SceneSpec([Scatterer([10, 0, 0], [20, 0, 0], 1.0)]), cfg)


def test_simulate_deterministic_with_noise():
    noisy = RadarConfig.desk(noise_power=2.0)
    scene = SceneSpec([Scatterer([10, 0, 0], [0, 0, 0], 1.0)], seed=7)
    a = simulate_adc(scene, noisy).data
    b = simulate_adc(scene, noisy).data
    assert np.array_equal(a, b)
    c = simulate_adc(scene, noisy, frame=1).data
    assert not np.array_equal(a, c)
    clean = simulate_adc(scene, RadarConfig.desk(noise_power=0.0)).data
    # circular noise of the configured power
    assert np.mean(np.abs(a - clean) ** 2) == pytest.approx(2.0, rel=0.02)


def test_multipath_adds_attenuated_ghost(cfg):
    base = SceneSpec([Scatterer([10, 0, 0.5], [0, 0, 0], 1.0)])
    ghost = SceneSpec([Scatterer([10, 0, 0.5], [0, 0, 0], 1.0)], multipath=True)
    pos, _, amp = ghost.radiating()
    assert pos.shape == (2, 3) and pos[1, 2] == pytest.approx(-2.5)
    assert amp[1] == pytest.approx(0.3)
    assert not np.array_equal(simulate_adc(base, cfg).data, simulate_adc(ghost, cfg).data)


def test_adc_roundtrip(tmp_path, cfg):
    scene = SceneSpec([Scatterer([10, 1, 0], [1, 0, 0], 1.0)])
    cube = AdcCube(simulate_adc(scene, cfg).data.astype(np.complex64))
    path = tmp_path / "c.adc"
    write_adc(path, cube)
    back = read_adc(path)
    assert np.array_equal(back.data, cube.data)
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError):
        read_adc(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(FormatError):
        read_adc(path)


# -- advance_scene -----------------------------------------------------------------

def test_advance_zero_step_is_identity():
    scene = SceneSpec([Scatterer([10, 1, 2], [1, 2, 3], 0.5)], ego=EgoMotion([1, 0, 0], [0, 0, 0.2]))
    out = advance_scene(scene, 0.0)
    assert np.array_equal(out.positions(), scene.positions())
    assert np.array_equal(out.velocities(), scene.velocities())


def test_advance_linear_motion():
    scene = SceneSpec([Scatterer([10, 0, 0], [1, 0, 0], 1.0)])
    out = advance_scene(scene, 0.1)
    np.testing.assert_allclose(out.positions()[0], [10.1, 0, 0], atol=1e-15)
    assert out.scatterers[0].reflectivity == 1.0


def test_pure_ego_yaw_rotates_static_points_by_minus_theta():
    rng = np.random.default_rng(3)
    pts = rng.uniform([5, -3, -1], [15, 3, 1], size=(20, 3))
    theta, dt = 0.05, 0.2
    scene = SceneSpec([Scatterer(p, [0, 0, 0], 1.0) for p in pts],
                      ego=EgoMotion([0, 0, 0], [0, 0, theta / dt]))
    out = advance_scene(scene, dt)
    c, s = np.cos(-theta), np.sin(-theta)
    rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    np.testing.assert_allclose(out.positions(), pts @ rz.T, atol=1e-12)


@given(st.floats(-3, 3), st.floats(-0.3, 0.3), st.floats(0.01, 0.5))
@settings(max_examples=30, deadline=None)
def test_advance_preserves_pairwise_distances_of_static_points(v, w, dt):
    pts = np.array([[10.0, 1.0, 0.0], [12.0, -2.0, 0.5], [8.0, 0.0, -1.0]])
    scene = SceneSpec([Scatterer(p, [0, 0, 0], 1.0) for p in pts],
                      ego=EgoMotion([v, 0.1, 0], [0, w, w]))
    out = advance_scene(scene, dt).positions()
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(out[:, None] - out[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-12)


def test_advance_moves_boxes_with_ego():
    box = TrackedBox(1, [10, 0, 0], [2, 1, 1], velocity=[1, 0, 0])
    scene = SceneSpec([], ego=EgoMotion([2, 0, 0], [0, 0, 0]), boxes=[box])
    out = advance_scene(scene, 0.5)
    np.testing.assert_allclose(out.boxes[0].center, [9.5, 0, 0])
    assert out.frame == 1


def test_scene_json_roundtrip():
    scene = SceneSpec([Scatterer([10, 1, 2], [1, 2, 3], 0.5, object_id=2)],
                      ego=EgoMotion([1, 0, 0], [0, 0, 0.1]),
                      boxes=[TrackedBox(2, [10, 1, 2], [2, 2, 2])], seed=11)
    back = SceneSpec.from_json(scene.to_json())
    assert back.to_json() == scene.to_json()
    with pytest.raises(ValueError):
        SceneSpec.from_dict({"scatterers": [{"pos": [1, 2, 3]}]})
    with pytest.raises(ValueError):
        Scatterer([1, 2, 3], [0, 0, 0], 0.0)


# -- ground truth ---------------------------------------------------------------

def test_static_scene_has_zero_flow(cfg, grid):
    scene = random_scene(4, cfg, grid, dynamic=False)
    gt = ground_truth(scene, advance_scene(scene, cfg.frame_interval), grid)
    assert gt.occupancy.any()
    assert np.all(gt.flow == 0.0)


def test_radial_motion_of_two_range_bins(cfg, grid):
    p = grid.index_to_cartesian(np.array([10.0, 5.0, 3.0]))
    dt = 0.2
    v = 2 * grid.range_step / dt * p / np.linalg.norm(p)
    src = SceneSpec([Scatterer(p, v, 1.0)], seed=1)
    gt = ground_truth(src, advance_scene(src, dt), grid)
    assert gt.occupancy[10, 5, 3]
    np.testing.assert_allclose(gt.flow[:, 10, 5, 3], [2.0, 0.0, 0.0], atol=1e-9)


def test_occupancy_matches_brute_force(cfg, grid):
    scene = random_scene(9, cfg, grid, dynamic=True)
    gt = ground_truth(scene, advance_scene(scene, cfg.frame_interval), grid)
    pts, _ = cluster_points(scene)
    centers = grid.voxel_centers()
    brute = np.zeros(grid.spatial_shape, dtype=bool)
    for idx in np.ndindex(*grid.spatial_shape):
        count = 0
        for q in pts:
            if np.sqrt(np.sum((centers[idx] - q) ** 2)) <= 0.5:
                count += 1
        brute[idx] = count >= 3
    assert np.array_equal(brute, gt.occupancy)
    assert np.all(gt.flow[:, ~gt.occupancy] == 0)


def test_cluster_points_are_seeded(cfg, grid):
    scene = random_scene(2, cfg, grid)
    a, la = cluster_points(scene)
    b, lb = cluster_points(scene)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert a.shape == (5 * len(scene.scatterers), 3)


def test_random_scene_deterministic_and_in_window(cfg, grid):
    a = random_scene(21, cfg, grid)
    b = random_scene(21, cfg, grid)
    assert a.to_json() == b.to_json()
    simulate_adc(a, cfg)
    simulate_adc(advance_scene(a, cfg.frame_interval), cfg)
    assert any(s.object_id >= 0 for s in a.scatterers)
    rot = Rotation.from_rotvec(a.boxes[0].rotvec).as_matrix()
    assert np.allclose(rot, np.eye(3))
