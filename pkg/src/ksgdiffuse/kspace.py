"""Measurement model: centered unitary 2D FFTs and Cartesian undersampling masks.

Images and k-space grids are plain ``complex128`` arrays of shape ``(H, W)``
(leading batch axes are allowed by the transforms). k-space uses the centered
convention, the DC coefficient sits at ``(H // 2, W // 2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import InvalidArgumentError

CARTESIAN = "cartesian"
GAUSSIAN = "gaussian"
DENSE = "dense"

DEFAULT_CENTER_FRACTIONS = {4: 0.08, 6: 0.06, 8: 0.04, 10: 0.02}


def as_image(x, name: str = "image") -> np.ndarray:
    """Validate and convert to a finite complex128 ``(H, W)`` array."""
    a = np.asarray(x)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty 2D grid, got shape {a.shape}")
    a = a.astype(np.complex128, copy=False)
    if not np.isfinite(a).all():
        raise InvalidArgumentError(f"{name} contains non-finite values")
    return a


def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2D DFT over the last two axes."""
    x = np.fft.ifftshift(x, axes=(-2, -1))
    x = np.fft.fft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def ifft2c(k: np.ndarray) -> np.ndarray:
    """Inverse of :func:`fft2c`."""
    k = np.fft.ifftshift(k, axes=(-2, -1))
    k = np.fft.ifft2(k, norm="ortho")
    return np.fft.fftshift(k, axes=(-2, -1))


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary sampling pattern.

    For column-structured masks (``cartesian``/``gaussian``) ``columns`` lists
    the sampled column indices in ascending order and every column of
    ``entries`` is either all ones or all zeros.
    """

    entries: np.ndarray
    structure: str = DENSE
    columns: tuple[int, ...] | None = None

    def __post_init__(self):
        e = np.asarray(self.entries)
        if e.ndim != 2:
            raise InvalidArgumentError(f"mask must be 2D, got shape {e.shape}")
        if not np.isin(e, (0, 1)).all():
            raise InvalidArgumentError("mask entries must be 0 or 1")
        e = e.astype(bool)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        if self.structure != DENSE:
            cols = tuple(int(c) for c in self.columns or ())
            object.__setattr__(self, "columns", cols)
            col_any = e.any(axis=0)
            if not (e == col_any[None, :]).all():
                raise InvalidArgumentError("column-structured mask has a partially sampled column")
            if tuple(np.flatnonzero(col_any)) != cols:
                raise InvalidArgumentError("recorded column set does not match mask entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def acceleration(self) -> float:
        n = int(self.entries.sum())
        return math.inf if n == 0 else self.entries.size / n

    @classmethod
    def from_columns(cls, h, w, columns, structure=CARTESIAN) -> "Mask":
        cols = np.zeros(w, dtype=bool)
        cols[list(columns)] = True
        entries = np.broadcast_to(cols, (h, w)).copy()
        return cls(entries, structure, tuple(int(c) for c in np.flatnonzero(cols)))

    @classmethod
    def dense(cls, entries) -> "Mask":
        return cls(np.asarray(entries), DENSE, None)


def default_center_fraction(acceleration: float) -> float:
    """fastMRI challenge pairing of acceleration and center fraction."""
    key = int(round(acceleration))
    if key in DEFAULT_CENTER_FRACTIONS and math.isclose(acceleration, key):
        return DEFAULT_CENTER_FRACTIONS[key]
    # Keep the same number of center lines per unit of acceleration.
    return min(0.32 / acceleration, 0.5)


def _center_columns(h, w, acceleration, center_fraction):
    if h < 1 or w < 1:
        raise InvalidArgumentError(f"mask shape must be positive, got {(h, w)}")
    if not 0.0 < center_fraction < 1.0:
        raise InvalidArgumentError(f"center_fraction must lie in (0, 1), got {center_fraction}")
    if not acceleration > 0:
        raise InvalidArgumentError(f"acceleration must be positive, got {acceleration}")
    if center_fraction * w < 1.0:
        raise InvalidArgumentError(
            f"center_fraction={center_fraction} leaves no center column for width {w}"
        )
    n_center = int(round(w * center_fraction))
    target = w / acceleration
    if n_center >= w:
        p = 1.0
    else:
        p = (target - n_center) / (w - n_center)
    if p < 0.0 or p > 1.0 + 1e-12:
        which = "acceleration" if p > 1.0 else "center_fraction"
        raise InvalidArgumentError(
            f"infeasible mask parameters ({which}): acceleration={acceleration}, "
            f"center_fraction={center_fraction} give keep probability {p:.4f} outside [0, 1]"
        )
    pad = (w - n_center + 1) // 2
    center = np.zeros(w, dtype=bool)
    center[pad:pad + n_center] = True
    return center, n_center, target, min(p, 1.0)


def make_cartesian_mask(h: int, w: int, acceleration: float, center_fraction: float, seed: int) -> Mask:
    """fastMRI-style random column mask.

    ``round(center_fraction * w)`` contiguous center columns are always kept;
    every other column is kept independently with probability
    ``(w / acceleration - n_center) / (w - n_center)``.
    """
    center, n_center, _, p = _center_columns(h, w, acceleration, center_fraction)
    u = rng.uniform(w, seed, purpose=rng.Purpose.MASK_CARTESIAN)
    cols = center | (u < p)
    return Mask.from_columns(h, w, np.flatnonzero(cols), CARTESIAN)


def gaussian_inclusion_probabilities(w: int, acceleration: float, center_fraction: float) -> np.ndarray:
    """Per-column keep probability of :func:`make_gaussian_mask_1d`.

    Outside the center block the probability is ``min(1, c * g(j))`` with
    ``g`` a Gaussian density at ``w / 2`` with standard deviation ``w / 6``;
    ``c`` is found by water-filling so the expected column count equals
    ``w / acceleration``.
    """
    center, n_center, target, _ = _center_columns(1, w, acceleration, center_fraction)
    j = np.arange(w, dtype=np.float64)
    g = np.exp(-0.5 * ((j - w / 2.0) / (w / 6.0)) ** 2)
    g[center] = 0.0
    probs = np.where(center, 1.0, 0.0)
    budget = target - n_center
    free = ~center
    # Clip the largest weights at 1 until the remaining mass fits.
    while budget > 1e-12 and free.any():
        c = budget / g[free].sum()
        scaled = c * g
        over = free & (scaled >= 1.0 - 1e-12)
        if not over.any():
            probs[free] = scaled[free]
            break
        probs[over] = 1.0
        budget -= over.sum()
        free &= ~over
    return probs


def make_gaussian_mask_1d(h: int, w: int, acceleration: float, center_fraction: float, seed: int) -> Mask:
    """Column mask with Gaussian-weighted keep probabilities, see
    :func:`gaussian_inclusion_probabilities`."""
    probs = gaussian_inclusion_probabilities(w, acceleration, center_fraction)
    u = rng.uniform(w, seed, purpose=rng.Purpose.MASK_GAUSSIAN)
    return Mask.from_columns(h, w, np.flatnonzero(u < probs), GAUSSIAN)


def make_mask(kind, h, w, acceleration, center_fraction=None, seed=0) -> Mask:
    if center_fraction is None:
        center_fraction = default_center_fraction(acceleration)
    if kind == CARTESIAN:
        return make_cartesian_mask(h, w, acceleration, center_fraction, seed)
    if kind == GAUSSIAN:
        return make_gaussian_mask_1d(h, w, acceleration, center_fraction, seed)
    raise InvalidArgumentError(f"unknown mask kind {kind!r}")


def _entries(m) -> np.ndarray:
    return m.entries if isinstance(m, Mask) else np.asarray(m, dtype=bool)


def apply_mask(k: np.ndarray, m: Mask) -> np.ndarray:
    """Zero every k-space coefficient the mask does not sample."""
    e = _entries(m)
    if np.shape(k)[-2:] != e.shape:
        raise InvalidArgumentError(f"mask shape {e.shape} does not match k-space shape {np.shape(k)}")
    return np.where(e, k, 0.0).astype(np.complex128)
