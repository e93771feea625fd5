"""PSNR and SSIM for [0, 1] images."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 99.0  # reported for identical images instead of infinity


def psnr(a: np.ndarray, b: np.ndarray, cap: float = PSNR_CAP) -> float:
    """10 * log10(1 / MSE) for images in [0, 1]; capped for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(10.0 * np.log10(1.0 / mse), cap)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM with the standard 11x11 Gaussian window (sigma 1.5).

    Multichannel images are averaged over channels; windows are 'valid' so
    borders do not dilute the statistics.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.shape[0] < 11 or a.shape[1] < 11:
        raise ValueError(f"image {a.shape[:2]} smaller than the 11x11 SSIM window")
    return float(np.mean([_ssim_channel(a[..., c], b[..., c], k1, k2) for c in range(a.shape[2])]))


def _ssim_channel(x, y, k1, k2):
    win = _gaussian_window()
    c1 = k1**2
    c2 = k2**2
    mu_x = convolve2d(x, win, mode="valid")
    mu_y = convolve2d(y, win, mode="valid")
    xx = convolve2d(x * x, win, mode="valid")
    yy = convolve2d(y * y, win, mode="valid")
    xy = convolve2d(x * y, win, mode="valid")
    var_x = xx - mu_x**2
    var_y = yy - mu_y**2
    cov = xy - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return np.mean(num / den)


def frame_metrics(generated: np.ndarray, reference: np.ndarray) -> dict:
    """Per-frame PSNR/SSIM plus means for aligned (N, H, W, C) stacks."""
    if generated.shape != reference.shape:
        raise ValueError(
            f"frame stacks differ: {generated.shape} vs {reference.shape}"
        )
    per_psnr = [psnr(g, r) for g, r in zip(generated, reference)]
    per_ssim = [ssim(g, r) for g, r in zip(generated, reference)]
    return {
        "psnr": per_psnr,
        "ssim": per_ssim,
        "mean_psnr": float(np.mean(per_psnr)),
        "mean_ssim": float(np.mean(per_ssim)),
    }
