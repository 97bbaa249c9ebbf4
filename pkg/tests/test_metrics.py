import math

import numpy as np
import pytest
from oracles import psnr_loop, rmse_loop

from simac.metrics import accuracy, accuracy_from_psnr, psnr, rmse, ssim


def test_rmse_cases():
    x = np.random.default_rng(0).uniform(0, 1, 50)
    assert rmse(x, x) == 0.0
    assert rmse(x + 0.1, x) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        rmse([], [])


def test_rmse_and_psnr_match_loops():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b = rng.uniform(0, 1, (2, 64))
        assert abs(rmse(a, b) - rmse_loop(a, b)) <= 1e-12
        m1, m2 = rng.uniform(0, 255, (2, 8, 8, 3))
        assert abs(psnr(m1, m2) - psnr_loop(m1, m2)) <= 1e-12


def test_rmse_scales_with_residual():
    rng = np.random.default_rng(2)
    a, b = rng.uniform(0, 1, (2, 30))
    assert rmse(3 * a, 3 * b) == pytest.approx(3 * rmse(a, b), rel=1e-12)


def test_psnr_examples():
    z = np.zeros((4, 4, 3))
    assert psnr(z, z) == 99.0
    assert psnr(np.full((2, 2), 255.0), np.zeros((2, 2))) == pytest.approx(0.0, abs=1e-12)
    assert psnr(np.full((10,), math.sqrt(65.025)), np.zeros(10)) == pytest.approx(30.0, abs=1e-12)
    with pytest.raises(ValueError):
        psnr(z, np.zeros((4, 4)))


def test_psnr_decreases_with_error():
    vals = [psnr(np.full(8, e), np.zeros(8)) for e in (1.0, 2.0, 5.0, 40.0)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_ssim_identity_constant_and_negative():
    img = np.random.default_rng(3).uniform(0, 255, (8, 8, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)
    flat = np.full((8, 8, 3), 17.0)
    assert ssim(flat, flat) == pytest.approx(1.0, abs=1e-12)
    two = np.array([[0.0, 255.0]])
    assert ssim(two, 255.0 - two) < 0


def test_ssim_two_pixel_by_hand():
    a = np.array([[10.0, 50.0]])
    b = np.array([[20.0, 40.0]])
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    # means 30 and 30, variances 400 and 100, covariance 200
    expect = (2 * 30 * 30 + c1) * (2 * 200 + c2) / ((900 + 900 + c1) * (400 + 100 + c2))
    assert ssim(a, b) == pytest.approx(expect, rel=1e-12)


def test_accuracy_threshold():
    m = np.zeros((4, 4))
    assert accuracy([(m, m), (m, m)]) == 1.0
    at_15 = math.sqrt(255.0**2 / 10**1.5)  # constant error giving exactly 15 dB
    assert psnr(np.full(16, at_15), np.zeros(16)) == pytest.approx(15.0, abs=1e-12)
    assert accuracy_from_psnr([15.0, 14.999999]) == 0.5
    assert accuracy_from_psnr([15.0]) == 1.0
    with pytest.raises(ValueError):
        accuracy([])
