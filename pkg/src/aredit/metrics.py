"""PSNR / SSIM fidelity metrics (pretrained-network metrics are out of scope)."""

import math

import numpy as np

from .errors import ContractViolation, ShapeMismatch
from .numerics import Image

SSIM_WINDOW = 8
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 255.0


def _check_same_size(a: Image, b: Image) -> None:
    if (a.height, a.width) != (b.height, b.width):
        raise ShapeMismatch(
            f"image sizes differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )


def psnr(a: Image, b: Image) -> float:
    """10*log10(255^2 / MSE) over all channels; +inf when images are equal."""
    _check_same_size(a, b)
    diff = a.pixels.astype(np.float64) - b.pixels.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def masked_psnr(a: Image, b: Image, mask: np.ndarray) -> float:
    """PSNR over the masked pixels only."""
    _check_same_size(a, b)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (a.height, a.width):
        raise ShapeMismatch("mask shape does not match images")
    if not mask.any():
        raise ContractViolation("mask is empty")
    diff = a.pixels.astype(np.float64)[mask] - b.pixels.astype(np.float64)[mask]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / mse)


def _luma(img: Image) -> np.ndarray:
    p = img.pixels.astype(np.float64)
    return 0.299 * p[..., 0] + 0.587 * p[..., 1] + 0.114 * p[..., 2]


def _window_sums(x: np.ndarray, w: int) -> np.ndarray:
    """Sum over every w x w window, stride 1, via integral image."""
    ii = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.float64)
    ii[1:, 1:] = np.cumsum(np.cumsum(x, axis=0), axis=1)
    return ii[w:, w:] - ii[:-w, w:] - ii[w:, :-w] + ii[:-w, :-w]


def ssim(a: Image, b: Image) -> float:
    """Mean local SSIM: uniform 8x8 window, stride 1, on luma."""
    _check_same_size(a, b)
    w = SSIM_WINDOW
    if a.height < w or a.width < w:
        raise ContractViolation(f"images must be at least {w}x{w}")
    x = _luma(a)
    y = _luma(b)
    n = float(w * w)
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    mx = _window_sums(x, w) / n
    my = _window_sums(y, w) / n
    # population (biased) second moments over each window
    vx = _window_sums(x * x, w) / n - mx * mx
    vy = _window_sums(y * y, w) / n - my * my
    cxy = _window_sums(x * y, w) / n - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(np.mean(s))
