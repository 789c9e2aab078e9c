"""Image-quality metrics on magnitude images.

Both metrics compare ``|reference|`` against ``|test|``. The dynamic range
defaults to the largest reference magnitude.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    data_range: float

    def as_dict(self) -> dict:
        d = asdict(self)
        # JSON has no infinity literal.
        if math.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return d


def _magnitudes(reference, test):
    a = np.abs(np.asarray(reference)).astype(np.float64)
    b = np.abs(np.asarray(test)).astype(np.float64)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch: reference {a.shape}, test {b.shape}")
    if a.ndim != 2:
        raise InvalidArgumentError(f"metrics need 2D images, got shape {a.shape}")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise InvalidArgumentError("metrics need finite images")
    return a, b


def _resolve_range(a, data_range):
    if data_range is None:
        data_range = float(a.max()) if a.size else 0.0
    data_range = float(data_range)
    if not (math.isfinite(data_range) and data_range > 0):
        raise InvalidArgumentError(f"data_range must be positive, got {data_range}")
    return data_range


def psnr(reference, test, data_range: float | None = None) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical magnitudes."""
    a, b = _magnitudes(reference, test)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    L = _resolve_range(a, data_range)
    return 10.0 * math.log10(L * L / mse)


def ssim(reference, test, data_range: float | None = None, win_size: int = SSIM_WINDOW,
         k1: float = SSIM_K1, k2: float = SSIM_K2) -> float:
    """Mean structural similarity over all fully contained ``win_size`` windows.

    Uses a uniform window and unbiased local (co)variances.
    """
    a, b = _magnitudes(reference, test)
    if win_size < 2 or min(a.shape) < win_size:
        raise InvalidArgumentError(f"ssim needs images of at least {win_size}x{win_size}, got {a.shape}")
    if np.array_equal(a, b):
        return 1.0
    L = _resolve_range(a, data_range)
    c1 = (k1 * L) ** 2
    c2 = (k2 * L) ** 2
    n = win_size * win_size
    cov_norm = n / (n - 1.0)

    def local_mean(x):
        return sliding_window_view(x, (win_size, win_size)).mean(axis=(-2, -1))

    ux, uy = local_mean(a), local_mean(b)
    vx = cov_norm * (local_mean(a * a) - ux * ux)
    vy = cov_norm * (local_mean(b * b) - uy * uy)
    vxy = cov_norm * (local_mean(a * b) - ux * uy)
    s = ((2 * ux * uy + c1) * (2 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
    return float(s.mean())


def evaluate(reference, test, data_range: float | None = None) -> MetricReport:
    a, _ = _magnitudes(reference, test)
    L = _resolve_range(a, data_range)
    return MetricReport(psnr=psnr(reference, test, L), ssim=ssim(reference, test, L), data_range=L)
