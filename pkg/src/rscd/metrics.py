"""Full-reference quality metrics and a row-striping indicator."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB over all samples; ``math.inf`` for identical inputs."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_taps():
    r = SSIM_WINDOW // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2 * SSIM_SIGMA ** 2))
    return g / g.sum()


def _filter_valid(img):
    taps = _gaussian_taps()
    r = SSIM_WINDOW // 2
    out = ndimage.correlate1d(img, taps, axis=0, mode="constant")
    out = ndimage.correlate1d(out, taps, axis=1, mode="constant")
    return out[r:-r, r:-r]


def ssim_map(a, b, data_range: float = 1.0) -> np.ndarray:
    """Local SSIM over every fully-contained 11x11 Gaussian window."""
    a, b = _pair(a, b)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW}px per side for SSIM")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    maps = []
    for ch in range(a.shape[2]):
        x, y = a[..., ch], b[..., ch]
        mx, my = _filter_valid(x), _filter_valid(y)
        sxx = _filter_valid(x * x) - mx * mx
        syy = _filter_valid(y * y) - my * my
        sxy = _filter_valid(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return np.stack(maps, axis=-1)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM (window 11, sigma 1.5, K1=0.01, K2=0.03), averaged over channels."""
    return float(np.mean(ssim_map(a, b, data_range)))


def row_discontinuity(frame) -> float:
    """Mean absolute difference between vertically adjacent rows."""
    f = np.asarray(frame, np.float64)
    if f.ndim < 2 or f.shape[0] < 2:
        raise ValueError("row_discontinuity needs at least two rows")
    return float(np.mean(np.abs(np.diff(f, axis=0))))


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    row_discontinuity: float | None = None

    def to_json(self) -> dict:
        out = {"psnr_db": "inf" if math.isinf(self.psnr) else self.psnr, "ssim": self.ssim}
        if self.row_discontinuity is not None:
            out["row_discontinuity"] = self.row_discontinuity
        return out


def evaluate(a, b, peak: float = 1.0, stripes: bool = False) -> MetricReport:
    return MetricReport(psnr(a, b, peak), ssim(a, b, peak),
                        row_discontinuity(a) if stripes else None)


def interior(frame, border: int):
    """Crop ``border`` pixels from every side."""
    if border <= 0:
        return frame
    return frame[border:-border, border:-border]
