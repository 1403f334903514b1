import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rscd.metrics import MetricReport, evaluate, interior, psnr, row_discontinuity, ssim, ssim_map


def test_psnr_identical_is_inf(rng):
    a = rng.uniform(size=(12, 12, 3))
    assert psnr(a, a) == math.inf
    assert MetricReport(psnr(a, a), ssim(a, a)).to_json()["psnr_db"] == "inf"


def test_psnr_constant_offset(rng):
    a = rng.uniform(0, 0.9, (20, 30, 3))
    assert abs(psnr(a, a + 0.1) - 20.0) < 1e-3


def test_psnr_matches_empirical_rmse(rng):
    a = rng.uniform(0.2, 0.8, (64, 64))
    b = a + rng.normal(0, 0.02, a.shape)
    rmse = np.sqrt(np.mean((a - b) ** 2))
    assert abs(psnr(a, b) - 20 * math.log10(1 / rmse)) < 0.1


def test_psnr_errors():
    with pytest.raises(ValueError):
        psnr(np.zeros((3, 3)), np.zeros((3, 4)))


def test_ssim_identical_is_one(rng):
    a = rng.uniform(size=(16, 16, 3))
    assert ssim(a, a) == 1.0


def test_ssim_constant_images_closed_form():
    d = 0.05
    a = np.full((20, 20), 0.5)
    b = a + d
    c1 = 0.01 ** 2
    expected = (2 * 0.5 * (0.5 + d) + c1) / (0.5 ** 2 + (0.5 + d) ** 2 + c1)
    assert ssim(a, b) == pytest.approx(expected, abs=1e-12)
    assert ssim(a, b) < 1


def test_ssim_independent_noise_near_zero():
    rng = np.random.default_rng(9)
    vals = [ssim(rng.uniform(size=(64, 64)), rng.uniform(size=(64, 64))) for _ in range(10)]
    assert abs(np.mean(vals)) < 0.1


def test_ssim_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_ssim_map_valid_region(rng):
    assert ssim_map(rng.uniform(size=(20, 15, 2)), rng.uniform(size=(20, 15, 2))).shape == (10, 5, 2)


@given(st.integers(0, 2**16))
def test_symmetry_and_range(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(16, 16, 2))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert abs(psnr(a, b) - psnr(b, a)) < 1e-9
    s = ssim(a, b)
    assert abs(s - ssim(b, a)) < 1e-9
    assert -1 <= s <= 1
    assert 0 < psnr(a, b) < math.inf


@pytest.mark.parametrize("offset", [0.02, 0.05, 0.1])
def test_ssim_offset_invariance(offset):
    ys, xs = np.mgrid[0:32, 0:32].astype(np.float64)
    a = 0.45 + 0.3 * np.sin(2.7 * xs) * np.cos(2.2 * ys)
    b = 0.45 + 0.3 * np.cos(1.9 * xs + 0.4) * np.sin(2.9 * ys)
    assert abs(ssim(a + offset, b + offset) - ssim(a, b)) < 1e-6


def test_row_discontinuity_examples():
    assert row_discontinuity(np.full((5, 4), 0.3)) == 0
    alt = np.zeros((6, 4))
    alt[1::2] = 1
    assert row_discontinuity(alt) == 1.0
    h = 9
    ramp = np.repeat(np.linspace(0, 1, h)[:, None], 5, axis=1)
    assert row_discontinuity(ramp) == pytest.approx(1 / (h - 1))
    with pytest.raises(ValueError):
        row_discontinuity(np.zeros((1, 5)))


def test_evaluate_and_interior(rng):
    a = rng.uniform(size=(20, 20, 1))
    rep = evaluate(a, a, stripes=True).to_json()
    assert rep["psnr_db"] == "inf" and rep["ssim"] == 1.0 and "row_discontinuity" in rep
    assert "row_discontinuity" not in evaluate(a, a).to_json()
    assert interior(a, 3).shape == (14, 14, 1)
    assert interior(a, 0) is a
