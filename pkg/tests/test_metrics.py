"""PSNR and SSIM evaluation metrics."""

import numpy as np
import pytest

from peelnet.metrics import PSNR_CAP, SSIM_WINDOW, psnr, ssim


class TestPsnr:
    def test_identical_hits_cap(self, rng):
        img = rng.random((3, 24, 32))
        assert psnr(img, img.copy()) == PSNR_CAP == 99.0

    def test_uniform_offset_tenth_is_twenty_db(self, rng):
        gt = rng.random((3, 24, 32)) * 0.8
        pred = gt + 0.1
        assert psnr(pred, gt) == pytest.approx(20.0, abs=1e-9)

    def test_offset_hundredth_is_forty_db(self, rng):
        gt = rng.random((3, 16, 16)) * 0.9
        assert psnr(gt + 0.01, gt) == pytest.approx(40.0, abs=1e-9)

    def test_peak_parameter(self, rng):
        gt = rng.random((8, 8))
        pred = gt + 0.1
        assert psnr(pred, gt, peak=2.0) == pytest.approx(20.0 + 20.0 * np.log10(2.0))

    def test_monotone_in_error(self, rng):
        gt = rng.random((3, 16, 16)) * 0.5
        assert psnr(gt + 0.01, gt) > psnr(gt + 0.05, gt) > psnr(gt + 0.2, gt)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="mismatch"):
            psnr(rng.random((3, 8, 8)), rng.random((3, 8, 9)))

    def test_float32_inputs_accepted(self, rng):
        img = rng.random((3, 16, 16)).astype(np.float32)
        assert psnr(img, img) == 99.0


class TestSsim:
    def test_identical_is_one(self, rng):
        img = rng.random((3, 32, 32))
        assert ssim(img, img.copy()) == pytest.approx(1.0, abs=1e-12)

    def test_inverted_high_contrast_low(self):
        gy, gx = np.mgrid[0:32, 0:32]
        gt = ((gy // 4 + gx // 4) % 2).astype(np.float64)
        pred = 1.0 - gt
        assert ssim(pred, gt) < 0.5

    def test_tiny_noise_stays_high(self, rng):
        gt = np.full((32, 32), 0.5)
        pred = gt + rng.normal(0.0, 1e-4, size=gt.shape)
        assert ssim(pred, gt) > 0.99

    def test_rgb_and_grayscale_paths(self, rng):
        grey = rng.random((16, 16))
        rgb = np.stack([grey, grey, grey])
        # luma of an achromatic image is the image itself
        assert ssim(rgb, rgb) == pytest.approx(1.0, abs=1e-12)
        assert ssim(grey, grey) == pytest.approx(1.0, abs=1e-12)

    def test_window_size_floor(self, rng):
        small = rng.random((SSIM_WINDOW - 1, SSIM_WINDOW - 1))
        with pytest.raises(ValueError, match="window"):
            ssim(small, small)
        edge = rng.random((SSIM_WINDOW, SSIM_WINDOW))
        assert np.isfinite(ssim(edge, edge.copy()))

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError, match="mismatch"):
            ssim(rng.random((16, 16)), rng.random((16, 17)))

    def test_bad_channel_count(self, rng):
        with pytest.raises(ValueError, match="expected"):
            ssim(rng.random((4, 16, 16)), rng.random((4, 16, 16)))

    def test_symmetry(self, rng):
        a = rng.random((3, 24, 24))
        b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_paper_resolution_runs(self, rng):
        a = rng.random((3, 240, 424))
        b = np.clip(a + rng.normal(0, 0.02, a.shape), 0, 1)
        value = ssim(a, b)
        assert -1.0 <= value <= 1.0
