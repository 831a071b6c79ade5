"""Fusion quality indexes: AG, SF, SD, MI, SCD and MS-SSIM.

All functions take float images in the 0-255 domain. ``f`` is the fused
image, ``a`` and ``b`` the two sources (infrared, visible).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
METRIC_NAMES = ("ag", "sf", "sd", "mi", "scd", "ms_ssim")


def _f64(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {x.shape}")
    return x


def avg_gradient(f) -> float:
    """Mean of sqrt((dx^2 + dy^2) / 2) with forward differences."""
    f = _f64(f)
    if min(f.shape) < 2:
        return 0.0
    dx = f[:-1, 1:] - f[:-1, :-1]
    dy = f[1:, :-1] - f[:-1, :-1]
    return float(np.mean(np.sqrt((dx * dx + dy * dy) / 2.0)))


def spatial_frequency(f) -> float:
    f = _f64(f)
    rf2 = np.mean(np.diff(f, axis=1) ** 2) if f.shape[1] > 1 else 0.0
    cf2 = np.mean(np.diff(f, axis=0) ** 2) if f.shape[0] > 1 else 0.0
    return float(np.sqrt(rf2 + cf2))


def std_dev(f) -> float:
    return float(np.std(_f64(f)))


def _bins(x: np.ndarray, bins: int) -> np.ndarray:
    return np.clip(np.floor(x), 0, bins - 1).astype(np.int64)


def _mi_pair(x, y, bins: int = 256) -> float:
    x, y = _bins(_f64(x), bins).ravel(), _bins(_f64(y), bins).ravel()
    if x.size != y.size:
        raise ValueError("images differ in size")
    joint = np.bincount(x * bins + y, minlength=bins * bins).reshape(bins, bins) / x.size
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(px, py)
    # fsum is exactly rounded, so MI(x, y) == MI(y, x) bit for bit
    return math.fsum(joint[nz] * np.log(joint[nz] / outer[nz]))


def mutual_info(f, a, b, bins: int = 256) -> float:
    """MI(f, a) + MI(f, b) from joint histograms, natural log."""
    return _mi_pair(f, a, bins) + _mi_pair(f, b, bins)


def _corr(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    den = np.sqrt(np.sum(xc * xc) * np.sum(yc * yc))
    if den == 0.0:
        return 0.0
    return float(np.sum(xc * yc) / den)


def scd(f, a, b) -> float:
    """Sum of correlations of differences: corr(f - b, a) + corr(f - a, b)."""
    f, a, b = _f64(f), _f64(a), _f64(b)
    return _corr(f - b, a) + _corr(f - a, b)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    """Normalised 2-D Gaussian kernel (float64)."""
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def _filter(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(x, k.shape)
    return np.einsum("ijkl,kl->ij", win, k)


def _ssim_terms(x, y, window: int, data_range: float) -> tuple[float, float]:
    """(mean SSIM, mean contrast-structure) over valid Gaussian windows."""
    k = gaussian_window(min(window, *x.shape))
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = _filter(x, k), _filter(y, k)
    vx = _filter(x * x, k) - mx * mx
    vy = _filter(y * y, k) - my * my
    cov = _filter(x * y, k) - mx * my
    cs = (2.0 * cov + c2) / (vx + vy + c2)
    lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _pool2(x: np.ndarray) -> np.ndarray:
    h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
    x = x[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_ssim(f, r, weights=MS_SSIM_WEIGHTS, window: int = 11,
            data_range: float = 255.0) -> float:
    """Multi-scale SSIM with 2x average-pool downsampling between scales.

    The window shrinks to the image side at coarse scales. Negative per-scale
    terms are clamped to 0 before exponentiation.
    """
    x, y = _f64(f), _f64(r)
    if x.shape != y.shape:
        raise ValueError(f"ms_ssim inputs differ in shape: {x.shape} vs {y.shape}")
    scales = len(weights)
    if min(x.shape) < 2 ** scales:
        raise ValueError(f"image {x.shape} too small for {scales} scales "
                         f"(needs >= {2 ** scales} px per side); use fewer scales")
    value = 1.0
    for j, w in enumerate(weights):
        s, cs = _ssim_terms(x, y, window, data_range)
        term = s if j == scales - 1 else cs
        value *= max(term, 0.0) ** w
        if j < scales - 1:
            x, y = _pool2(x), _pool2(y)
    return float(value)


def fusion_ms_ssim(f, a, b) -> float:
    """Mean of ms_ssim(f, a) and ms_ssim(f, b)."""
    return 0.5 * (ms_ssim(f, a) + ms_ssim(f, b))


@dataclass
class MetricReport:
    ag: float
    sf: float
    sd: float
    mi: float
    scd: float
    ms_ssim: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def evaluate(f, a, b) -> MetricReport:
    return MetricReport(
        ag=avg_gradient(f),
        sf=spatial_frequency(f),
        sd=std_dev(f),
        mi=mutual_info(f, a, b),
        scd=scd(f, a, b),
        ms_ssim=fusion_ms_ssim(f, a, b),
    )
