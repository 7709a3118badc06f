"""PSNR and SSIM for completed-frame evaluation.

Both run in float64.  PSNR is capped at 99 dB so identical images produce a
finite, sortable number.  SSIM uses the common 11-tap Gaussian window with
sigma 1.5 and K1=0.01, K2=0.03, evaluated on BT.601 luma over windows that
fit entirely inside the image.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
LUMA = (0.299, 0.587, 0.114)


def _to_luma(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[0] == 3:
        return LUMA[0] * arr[0] + LUMA[1] * arr[1] + LUMA[2] * arr[2]
    raise ValueError(f"expected [H,W] or [3,H,W], got {arr.shape}")


def psnr(pred: np.ndarray, gt: np.ndarray, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE), capped at 99 dB for (near-)identical inputs."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean(np.square(a - b)))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(peak * peak / mse))


def _gaussian_kernel() -> np.ndarray:
    half = SSIM_WINDOW // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
    return k / k.sum()


def _window_mean(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable Gaussian filter, restricted to fully interior windows."""
    half = SSIM_WINDOW // 2
    b = ndimage.correlate1d(a, kernel, axis=0, mode="constant")
    b = ndimage.correlate1d(b, kernel, axis=1, mode="constant")
    return b[half:-half, half:-half]


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean local SSIM on luma; images must be at least the window size."""
    x = _to_luma(pred)
    y = _to_luma(gt)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    kernel = _gaussian_kernel()
    c1 = K1 * K1
    c2 = K2 * K2
    mu_x = _window_mean(x, kernel)
    mu_y = _window_mean(y, kernel)
    xx = _window_mean(x * x, kernel) - mu_x * mu_x
    yy = _window_mean(y * y, kernel) - mu_y * mu_y
    xy = _window_mean(x * y, kernel) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))
