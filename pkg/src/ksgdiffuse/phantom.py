"""Synthetic complex phantoms drawn from a known Gaussian prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .kspace import apply_mask, fft2c
from .rng import ChainStream, Purpose

DEFAULT_AMPLITUDE = 5.0


@dataclass(frozen=True, eq=False)
class Phantom:
    mu: np.ndarray
    s2: float
    ground_truth: np.ndarray


def smooth_bump(h: int, w: int, amplitude: float = DEFAULT_AMPLITUDE, width: float | None = None) -> np.ndarray:
    """Gaussian blob at the grid center with a gentle linear phase ramp.

    ``width`` is the standard deviation in pixels (default ``min(h, w) / 5``).
    """
    if h < 1 or w < 1:
        raise InvalidArgumentError(f"phantom shape must be positive, got {(h, w)}")
    width = min(h, w) / 5.0 if width is None else float(width)
    if not width > 0:
        raise InvalidArgumentError(f"bump width must be positive, got {width}")
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    r2 = (yy - h / 2.0) ** 2 + (xx - w / 2.0) ** 2
    phase = 0.5 * np.pi * (xx / w - 0.5)
    return amplitude * np.exp(-r2 / (2.0 * width * width)) * np.exp(1j * phase)


def gaussian_phantom(h: int, w: int, s2: float = 1.0, seed: int = 0,
                     amplitude: float = DEFAULT_AMPLITUDE, width: float | None = None) -> Phantom:
    """Bump prior mean plus one exact draw from ``N(mu, s2)`` per real component."""
    if not s2 > 0:
        raise InvalidArgumentError(f"prior variance must be positive, got {s2}")
    mu = smooth_bump(h, w, amplitude, width)
    noise = ChainStream(seed).complex_normal((h, w), step=0, purpose=Purpose.PHANTOM, variance=s2)
    return Phantom(mu=mu, s2=float(s2), ground_truth=mu + noise)


def observe(image: np.ndarray, mask) -> np.ndarray:
    """Undersampled k-space ``M F image``."""
    return apply_mask(fft2c(np.asarray(image, dtype=np.complex128)), mask)
