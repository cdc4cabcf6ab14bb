"""PSNR and Gaussian-window SSIM."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ct import Raster

WINDOW = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    data_range: float

    def to_dict(self):
        d = asdict(self)
        if math.isinf(self.psnr):
            d["psnr"] = "inf"
        return d


def _arr(x):
    if isinstance(x, Raster):
        return np.asarray(x.values, dtype=np.float64)
    return np.asarray(x, dtype=np.float64)


def _check(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def default_data_range(reference):
    ref = _arr(reference)
    return float(ref.max() - ref.min())


def psnr(a, b, data_range=None):
    """Peak signal-to-noise ratio in dB; ``inf`` for identical inputs."""
    a, b = _arr(a), _arr(b)
    _check(a, b)
    data_range = default_data_range(a) if data_range is None else data_range
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(data_range**2 / mse)


def _gaussian_window():
    r = np.arange(WINDOW) - WINDOW // 2
    w = np.exp(-(r**2) / (2.0 * WINDOW_SIGMA**2))
    return w / w.sum()


def _filter_valid(img, w):
    rows = sliding_window_view(img, w.size, axis=0) @ w
    return sliding_window_view(rows, w.size, axis=1) @ w


def ssim_map(a, b, data_range):
    a, b = _arr(a), _arr(b)
    w = _gaussian_window()
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_a = _filter_valid(a, w)
    mu_b = _filter_valid(b, w)
    var_a = _filter_valid(a * a, w) - mu_a**2
    var_b = _filter_valid(b * b, w) - mu_b**2
    cov = _filter_valid(a * b, w) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range=None):
    """Mean SSIM over all fully-covered 11x11 Gaussian windows (sigma 1.5)."""
    a, b = _arr(a), _arr(b)
    _check(a, b)
    if min(a.shape) < WINDOW:
        raise ValueError(f"images must be at least {WINDOW}x{WINDOW} for SSIM, got {a.shape}")
    data_range = default_data_range(a) if data_range is None else data_range
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    return float(np.mean(ssim_map(a, b, data_range)))


def evaluate(reference, estimate, data_range=None):
    data_range = default_data_range(reference) if data_range is None else float(data_range)
    return MetricReport(psnr(reference, estimate, data_range), ssim(reference, estimate, data_range), data_range)
