import hashlib
import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tessflow.formats import FormatError
from tessflow.sim import AdcCube, RadarConfig, Scatterer, SceneSpec, relative_velocity, simulate_adc
from tessflow.tesseract import (
    PolarGrid, PreprocessConfig, Tesseract, analytic_bins, build_tesseract, parseval_scale,
    preprocess, project_planes, raw_grid, read_tesseract, read_volume, write_tesseract,
    write_volume,
)

GOLDEN = Path(__file__).parent / "data" / "golden.tess"
GOLDEN_SHA256 = "5634c17942734579f14a3943182097f9a8ceac8051db0c1c44b409a2208487f0"


@pytest.fixture(scope="module")
def cfg():
    return RadarConfig.desk(noise_power=0.0)


def random_scatterer(rng, cfg):
    """A scatterer inside the raw field of view and the unambiguous window."""
    g = raw_grid(cfg)
    r = rng.uniform(2.0, cfg.max_range - 2.0)
    u = rng.uniform(g.az_start + g.az_step, -g.az_start - g.az_step)
    w = rng.uniform(g.el_start + g.el_step, -g.el_start - g.el_step)
    direction = np.array([np.sqrt(1 - u * u - w * w), u, w])
    v_r = rng.uniform(-0.9, 0.9) * cfg.max_velocity
    return Scatterer(r * direction, v_r * direction, rng.uniform(0.5, 2.0))


def peak_error(cfg, sc):
    t = build_tesseract(simulate_adc(SceneSpec([sc]), cfg), cfg)
    peak = np.array(np.unravel_index(np.argmax(t.power), t.power.shape))
    u = sc.position / np.linalg.norm(sc.position)
    expected = analytic_bins(cfg, sc.position, float(sc.velocity @ u))
    return np.abs(peak - expected)


def test_zero_adc_gives_zero_tesseract(cfg):
    t = build_tesseract(AdcCube(np.zeros((280, 16, 64), complex)), cfg)
    assert t.power.shape == (16, 64, 28, 10)
    assert not np.any(t.power)


def test_parseval_total():
    noisy = RadarConfig.desk(noise_power=1.0)
    rng = np.random.default_rng(1)
    scene = SceneSpec([random_scatterer(rng, noisy) for _ in range(3)], seed=3)
    adc = simulate_adc(scene, noisy)
    t = build_tesseract(adc, noisy)
    lhs = np.sum(np.abs(adc.data) ** 2) * parseval_scale(noisy)
    assert abs(lhs - t.power.sum()) / lhs < 1e-9


def test_parseval_per_stage():
    x = np.random.default_rng(0).standard_normal((6, 5, 7)) + 1j
    e0 = np.sum(np.abs(x) ** 2)
    for axis in range(3):
        y = np.fft.fftshift(np.fft.fft(x, axis=axis), axes=axis)
        assert abs(np.sum(np.abs(y) ** 2) / x.shape[axis] - e0) / e0 < 1e-9


def test_channel_factorisation_error(cfg):
    with pytest.raises(ValueError):
        build_tesseract(AdcCube(np.zeros((279, 16, 64), complex)), cfg)
    with pytest.raises(ValueError):
        build_tesseract(AdcCube(np.zeros((280, 8, 64), complex)), cfg)


def test_single_scatterer_on_bin_centres(cfg):
    g = raw_grid(cfg)
    pos = g.index_to_cartesian(np.array([20.0, 17.0, 6.0]))
    v = g.doppler_axis()[11]
    sc = Scatterer(pos, v * pos / np.linalg.norm(pos), 1.0)
    t = build_tesseract(simulate_adc(SceneSpec([sc]), cfg), cfg)
    assert np.unravel_index(np.argmax(t.power), t.power.shape) == (11, 20, 17, 6)
    # an on-grid scatterer concentrates all energy in a single cell
    assert t.power.max() == pytest.approx(t.power.sum(), rel=1e-9)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=25, deadline=None)
def test_peak_within_one_bin(seed):
    cfg = RadarConfig.desk(noise_power=0.0)
    err = peak_error(cfg, random_scatterer(np.random.default_rng(seed), cfg))
    assert np.all(err <= 1.0 + 1e-9)


def test_grid_axes_symmetric(cfg):
    g = raw_grid(cfg)
    d = g.doppler_axis()
    assert d[g.num_doppler // 2] == 0.0
    np.testing.assert_allclose(d[1:], -d[1:][::-1])


# -- preprocess ------------------------------------------------------------------

def test_preprocess_full_scale_extents():
    rng = np.random.default_rng(0)
    prof = rng.random((1, 1, 107, 1))
    grid = raw_grid(RadarConfig.full_scale())
    t = Tesseract(np.broadcast_to(prof, (64, 256, 107, 37)), grid)
    out = preprocess(t, PreprocessConfig.full_scale())
    assert out.power.shape == (64, 128, 48, 32)
    assert out.grid.shape == (64, 128, 48, 32)
    s = (107 - 96) // 2
    np.testing.assert_array_equal(out.power[0, 0, :, 0], 0.5 * (prof[0, 0, s:s + 96:2, 0] + prof[0, 0, s + 1:s + 96:2, 0]))


def test_preprocess_desk_extents_and_grid(cfg):
    t = build_tesseract(simulate_adc(SceneSpec([Scatterer([10, 0, 0], [0, 0, 0], 1.0)]), cfg), cfg)
    out = preprocess(t)
    assert out.power.shape == (16, 32, 12, 8)
    g0, g1 = t.grid, out.grid
    assert g1.range_step == g0.range_step and g1.num_range == 32
    # the merged azimuth bin sits halfway between its two parents
    assert g1.az_values()[0] == pytest.approx(0.5 * (g0.az_values()[2] + g0.az_values()[3]))
    assert g1.el_values()[0] == pytest.approx(g0.el_values()[1])
    np.testing.assert_array_equal(g1.doppler_axis(), g0.doppler_axis())


def test_preprocess_azimuth_average_matches_scalar_loop():
    rng = np.random.default_rng(5)
    grid = PolarGrid(0, 1, 8, -0.5, 1 / 14, 14, -0.5, 0.1, 10, -4, 1, 4, 0.1)
    p = rng.random(grid.shape)
    out = preprocess(Tesseract(p, grid), PreprocessConfig(5, 6)).power
    ref = np.zeros((4, 4, 5, 6))
    for d in range(4):
        for r in range(4):
            for a in range(5):
                for e in range(6):
                    ref[d, r, a, e] = 0.5 * (p[d, r, 2 + 2 * a, 2 + e] + p[d, r, 3 + 2 * a, 2 + e])
    assert np.array_equal(out, ref)


def test_preprocess_energy_factor_two():
    rng = np.random.default_rng(6)
    grid = PolarGrid(0, 1, 4, -0.5, 0.1, 8, -0.5, 0.1, 4, -2, 1, 4, 0.1)
    p = rng.random(grid.shape)
    out = preprocess(Tesseract(p, grid), PreprocessConfig(4, 4)).power
    assert out.sum() * 2 == pytest.approx(p[:, :2].sum(), rel=1e-12)


def test_preprocess_rejects_small_input():
    grid = PolarGrid(0, 1, 4, -0.5, 0.1, 8, -0.5, 0.1, 4, -2, 1, 4, 0.1)
    with pytest.raises(ValueError):
        preprocess(Tesseract(np.zeros(grid.shape), grid), PreprocessConfig(12, 8))


# -- planes ----------------------------------------------------------------------

def test_planes_of_constant():
    grid = PolarGrid(0, 1, 5, -0.5, 0.1, 4, -0.5, 0.1, 3, -2, 1, 2, 0.1)
    ra, re, ae = project_planes(Tesseract(np.full(grid.shape, 2.5), grid))
    assert ra.shape == (5, 4) and re.shape == (5, 3) and ae.shape == (4, 3)
    for plane in (ra, re, ae):
        assert np.all(plane == 2.5)


def test_planes_single_support():
    p = np.zeros((2, 5, 4, 3))
    p[1, 3, 2, 1] = 7.0
    ra, re, ae = project_planes(p)
    for plane, idx in ((ra, (3, 2)), (re, (3, 1)), (ae, (2, 1))):
        assert plane[idx] == 7.0 and np.count_nonzero(plane) == 1


def test_planes_match_scalar_loop():
    p = np.random.default_rng(2).random((3, 5, 4, 3))
    ra, re, ae = project_planes(p)
    D, R, A, E = p.shape
    for r in range(R):
        for a in range(A):
            assert ra[r, a] == max(p[d, r, a, e] for d in range(D) for e in range(E))
        for e in range(E):
            assert re[r, e] == max(p[d, r, a, e] for d in range(D) for a in range(A))
    for a in range(A):
        for e in range(E):
            assert ae[a, e] == max(p[d, r, a, e] for d in range(D) for r in range(R))


# -- file format -------------------------------------------------------------------

def test_tesseract_roundtrip_bitwise(tmp_path):
    grid = PolarGrid(0, 0.5, 6, -0.3, 0.1, 4, -0.2, 0.1, 4, -3, 1.5, 4, 0.1)
    p = np.random.default_rng(0).random(grid.shape).astype(np.float32).astype(np.float64)
    path = tmp_path / "a.tess"
    write_tesseract(path, Tesseract(p, grid, frame_id=3))
    back = read_tesseract(path)
    assert np.array_equal(back.power, p) and back.grid == grid and back.frame_id == 3
    raw = path.read_bytes()
    write_tesseract(tmp_path / "b.tess", back)
    assert (tmp_path / "b.tess").read_bytes() == raw


def test_generic_volume_keeps_doppler_extent(tmp_path):
    grid = PolarGrid(0, 0.5, 6, -0.3, 0.1, 4, -0.2, 0.1, 4, -3, 1.5, 16, 0.1)
    flow = np.random.default_rng(1).random((3,) + grid.spatial_shape).astype(np.float32)
    write_volume(tmp_path / "f.vol", flow, grid)
    data, g, _, flags = read_volume(tmp_path / "f.vol")
    assert g == grid and flags == 1 and np.array_equal(data, flow)
    with pytest.raises(FormatError):
        read_tesseract(tmp_path / "f.vol")


@pytest.mark.parametrize("mutate", [
    lambda raw: b"BADMAGIC" + raw[8:],
    lambda raw: raw[:8] + struct.pack("<I", 99) + raw[12:],
    lambda raw: raw[:40],
    lambda raw: raw[:-1],
    lambda raw: b"",
])
def test_corrupt_files_raise_format_error(tmp_path, mutate):
    path = tmp_path / "c.tess"
    path.write_bytes(mutate(GOLDEN.read_bytes()))
    with pytest.raises(FormatError):
        read_tesseract(path)


def test_golden_file():
    raw = GOLDEN.read_bytes()
    assert hashlib.sha256(raw).hexdigest() == GOLDEN_SHA256
    assert raw[:8] == b"TESSVOL\x00" and struct.unpack_from("<4I", raw, 16) == (2, 3, 2, 2)
    t = read_tesseract(GOLDEN)
    assert t.frame_id == 7
    np.testing.assert_array_equal(t.power.reshape(-1), np.arange(24) * 0.25)
    assert t.grid == PolarGrid(0.5, 0.25, 3, -0.5, 0.5, 2, -0.25, 0.5, 2, -2.0, 2.0, 2, 0.1)
