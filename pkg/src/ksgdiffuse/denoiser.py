"""Noise predictors.

A denoiser maps a noisy complex image ``y_t`` and the ORIGINAL timestep label
``t`` to a predicted noise field of the same shape. Real and imaginary parts
are independent channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import _accel
from .errors import InvalidArgumentError
from .kspace import as_image
from .schedule import Schedule


@runtime_checkable
class Denoiser(Protocol):
    def predict_noise(self, y_t: np.ndarray, t: int, schedule: Schedule) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class GaussianPriorDenoiser:
    """Exact noise predictor for an i.i.d. Gaussian prior ``y_0 ~ N(mu, s2 I)``.

    With ``y_t = sqrt(abar) y_0 + sqrt(1 - abar) eps`` the posterior mean of
    ``y_0`` is ``m = (sqrt(abar) s2 y_t + (1 - abar) mu) / (abar s2 + 1 - abar)``
    and the returned prediction is ``(y_t - sqrt(abar) m) / sqrt(1 - abar)``.
    """

    mu: np.ndarray
    s2: float = 1.0

    def __post_init__(self):
        mu = np.asarray(self.mu)
        if mu.ndim == 0:
            mu = mu.reshape(1, 1)
        mu = as_image(mu, "prior mean").copy()
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        if not (math.isfinite(self.s2) and self.s2 > 0):
            raise InvalidArgumentError(f"prior variance must be positive and finite, got {self.s2}")

    def predict_noise(self, y_t, t, schedule):
        y_t = np.asarray(y_t, dtype=np.complex128)
        if y_t.shape != self.mu.shape:
            raise InvalidArgumentError(f"image shape {y_t.shape} does not match prior {self.mu.shape}")
        abar = schedule.alpha_bar_at(t)
        return gaussian_predict_noise(self.mu, self.s2, y_t, abar)


def gaussian_predict_noise(mu, s2, y_t, alpha_bar, kernels=None):
    """Closed-form noise prediction at a given ``alpha_bar`` (see
    :class:`GaussianPriorDenoiser`). ``alpha_bar = 1`` has no noise to predict
    and is rejected."""
    if not 0.0 <= alpha_bar < 1.0:
        raise InvalidArgumentError(f"alpha_bar must lie in [0, 1), got {alpha_bar}")
    k = kernels or _accel.KERNELS
    return k.gaussian_eps(y_t, mu, math.sqrt(alpha_bar), 1.0 - alpha_bar, float(s2))


class ZeroDenoiser:
    """Always predicts zero noise."""

    def predict_noise(self, y_t, t, schedule):
        return np.zeros(np.shape(y_t), dtype=np.complex128)
