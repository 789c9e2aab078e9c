"""Closed-form references for the Gaussian-prior model.

With a unitary Fourier transform and an i.i.d. complex prior
``y_0 ~ N(mu, s2 I)`` every k-space coefficient is an independent
``N((F mu)_k, s2)`` variable. Exact observation of the masked coefficients
pins them to ``x_obs`` and leaves the rest at their prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .kspace import Mask, as_image, fft2c, ifft2c
from .schedule import Schedule


@dataclass(frozen=True, eq=False)
class GaussianPosterior:
    mean: np.ndarray
    kspace_variance: np.ndarray


def gaussian_posterior(mu, s2: float, mask, x_obs) -> GaussianPosterior:
    mu = as_image(mu, "prior mean")
    x_obs = as_image(x_obs, "observation")
    m = mask.entries if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    if not (mu.shape == x_obs.shape == m.shape):
        raise InvalidArgumentError(f"shape mismatch: mu {mu.shape}, x_obs {x_obs.shape}, mask {m.shape}")
    if not s2 > 0:
        raise InvalidArgumentError(f"prior variance must be positive, got {s2}")
    k = np.where(m, x_obs, fft2c(mu))
    return GaussianPosterior(mean=ifft2c(k), kspace_variance=np.where(m, 0.0, float(s2)))


def step_coefficients(schedule: Schedule, t: int, s2: float):
    """Affine form ``y' = a y + b mu + sigma z`` of one reverse step with the
    Gaussian-prior denoiser on a single real component."""
    alpha = float(schedule.alpha[t - 1])
    beta = float(schedule.beta[t - 1])
    abar = float(schedule.alpha_bar[t - 1])
    d = abar * s2 + (1.0 - abar)
    # eps_hat = e1 * y + e0 * mu
    e1 = math.sqrt(1.0 - abar) / d
    e0 = -math.sqrt(abar) * math.sqrt(1.0 - abar) / d
    c = beta / math.sqrt(1.0 - abar)
    a = (1.0 - c * e1) / math.sqrt(alpha)
    b = -c * e0 / math.sqrt(alpha)
    return a, b, float(schedule.sigma2[t - 1])


def propagate_moments(schedule: Schedule, mu: float, s2: float, mean: float = 0.0, var: float = 1.0, start=None, stop=0):
    """Mean and variance of one real component after running positions
    ``start..stop+1`` (default: the whole schedule) from a Gaussian state."""
    start = schedule.num_steps if start is None else start
    for t in range(start, stop, -1):
        a, b, sigma2 = step_coefficients(schedule, t, s2)
        mean = a * mean + b * mu
        var = a * a * var + sigma2
    return mean, var
