"""Image quality metrics on real-valued images."""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate

SSIM_WINDOW = 7
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(ref, test) -> tuple[np.ndarray, np.ndarray]:
    ref = np.asarray(ref, dtype=float)
    test = np.asarray(test, dtype=float)
    if ref.shape != test.shape:
        raise ValueError(f"shape mismatch {ref.shape} vs {test.shape}")
    return ref, test


def mse(ref, test) -> float:
    ref, test = _pair(ref, test)
    return float(np.mean((ref - test) ** 2))


def psnr(ref, test) -> float:
    """``10 log10(max(ref)^2 / MSE)``; ``inf`` when the images are identical."""
    ref, test = _pair(ref, test)
    peak = float(ref.max())
    if peak <= 0:
        raise ValueError("PSNR needs a reference with positive maximum")
    err = mse(ref, test)
    if err == 0:
        return math.inf
    return 10.0 * math.log10(peak ** 2 / err)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim_map(ref, test, data_range: float | None = None) -> np.ndarray:
    """Local SSIM on every fully-contained 7x7 Gaussian window."""
    ref, test = _pair(ref, test)
    if min(ref.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    L = float(ref.max()) if data_range is None else float(data_range)
    if L <= 0:
        raise ValueError("SSIM undefined for zero dynamic range")
    win = gaussian_window()
    half = SSIM_WINDOW // 2
    crop = (slice(half, ref.shape[0] - half), slice(half, ref.shape[1] - half))

    def filt(a):
        return correlate(a, win, mode="constant")[crop]

    mx, my = filt(ref), filt(test)
    vx = filt(ref * ref) - mx * mx
    vy = filt(test * test) - my * my
    cxy = filt(ref * test) - mx * my
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))


def ssim(ref, test, data_range: float | None = None) -> float:
    """Mean SSIM, dynamic range ``max(ref)`` unless given."""
    return float(np.mean(ssim_map(ref, test, data_range)))
