"""Reverse diffusion with k-space guidance and coarse-to-fine Monte-Carlo.

Step positions follow the schedule in effect: ``t = n..1`` walks a schedule of
``n`` steps, level ``0`` is the clean image. Denoisers are always queried
with the original timestep label ``schedule.timesteps[t - 1]``.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _accel
from .errors import InvalidArgumentError, NumericalError
from .kspace import Mask, as_image, fft2c, ifft2c
from .rng import REFINE_CHAIN, ChainStream, Purpose
from .schedule import Schedule, respace


@dataclass(frozen=True)
class SamplerConfig:
    """Coarse-to-fine sampling parameters.

    ``T`` is the full schedule length, the coarse chains run ``T // k`` steps,
    ``N`` chains are averaged and ``T_refine`` final full-schedule steps are
    applied to the average when ``refine`` is set. ``ksg_noise=False`` gives
    the direct-replacement ablation. ``workers`` bounds how many coarse chains
    run at once; it never changes the result.
    """

    T: int = 4000
    k: int = 40
    N: int = 10
    T_refine: int = 20
    ksg_noise: bool = True
    refine: bool = True
    keep_samples: bool = False
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        for name in ("T", "k", "N", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {v!r}")
        if self.T // self.k < 1:
            raise InvalidArgumentError(f"k={self.k} leaves no coarse step for T={self.T}")
        if isinstance(self.T_refine, bool) or int(self.T_refine) != self.T_refine or self.T_refine < 0:
            raise InvalidArgumentError(f"T_refine must be a non-negative integer, got {self.T_refine!r}")
        if self.refine and self.T_refine >= self.T:
            raise InvalidArgumentError(f"T_refine={self.T_refine} must be smaller than T={self.T}")
        if int(self.seed) != self.seed:
            raise InvalidArgumentError(f"seed must be an integer, got {self.seed!r}")

    @property
    def coarse_steps(self) -> int:
        return self.T // self.k


@dataclass
class ReconResult:
    mean: np.ndarray
    variance: np.ndarray
    samples: list | None = None
    metadata: dict = field(default_factory=dict)


def speedup_factor(config: SamplerConfig) -> float:
    """Cost of ``N`` full chains over the cost of coarse chains plus refinement."""
    if not config.refine:
        return float(config.k)
    TN = config.T * config.N
    return TN / (TN / config.k + config.T_refine)


def _check_finite(y, where):
    if not np.isfinite(y).all():
        raise NumericalError(f"non-finite state after {where}")


def reverse_step(y_t, t: int, schedule: Schedule, denoiser, rng: ChainStream, purpose=Purpose.REVERSE):
    """One ancestral step ``y_t -> y'_{t-1}`` with the fixed variance ``sigma2[t]``."""
    if not 1 <= t <= schedule.num_steps:
        raise InvalidArgumentError(f"step {t} outside 1..{schedule.num_steps}")
    i = t - 1
    alpha = float(schedule.alpha[i])
    beta = float(schedule.beta[i])
    abar = float(schedule.alpha_bar[i])
    sigma2 = float(schedule.sigma2[i])
    eps = denoiser.predict_noise(y_t, int(schedule.timesteps[i]), schedule)
    if np.shape(eps) != np.shape(y_t):
        raise InvalidArgumentError(f"denoiser returned shape {np.shape(eps)} for input {np.shape(y_t)}")
    eps_coef = 0.0 if beta == 0.0 else beta / math.sqrt(1.0 - abar)
    z = rng.complex_normal(np.shape(y_t), step=t, purpose=purpose) if sigma2 > 0.0 else None
    return _accel.KERNELS.reverse_update(y_t, eps, z, 1.0 / math.sqrt(alpha), eps_coef, math.sqrt(sigma2))


def _mask_entries(mask, shape):
    e = mask.entries if isinstance(mask, Mask) else np.asarray(mask, dtype=bool)
    if e.shape != tuple(shape):
        raise InvalidArgumentError(f"mask shape {e.shape} does not match image shape {tuple(shape)}")
    return e


def ksg_step(y_prime, t: int, x_obs, mask, schedule: Schedule, ksg_noise: bool, rng: ChainStream):
    """Mix a denoised state with the observation at level ``t``.

    Observed coefficients are replaced by ``x_obs`` plus, when ``ksg_noise``
    is set, the Fourier transform of image-domain noise of variance
    ``1 - abar_t`` per real component. At level 0 the replacement is exact.
    """
    shape = np.shape(y_prime)
    if np.shape(x_obs) != shape:
        raise InvalidArgumentError(f"observation shape {np.shape(x_obs)} does not match image {shape}")
    m = _mask_entries(mask, shape)
    abar = schedule.alpha_bar_level(t)
    target = x_obs
    if ksg_noise and abar < 1.0:
        noise = rng.complex_normal(shape, step=t, purpose=Purpose.KSG, variance=1.0 - abar)
        target = x_obs + fft2c(noise)
    return ifft2c(_accel.KERNELS.replace(fft2c(y_prime), target, m))


def project(y, x_obs, mask):
    """Direct data-consistency replacement ``F^-1((1 - M) F y + M x_obs)``."""
    m = _mask_entries(mask, np.shape(y))
    return ifft2c(_accel.KERNELS.replace(fft2c(y), x_obs, m))


def sample_unconditional(shape, schedule: Schedule, denoiser, seed: int, chain: int = 0):
    """Plain ancestral sampling from ``y_T ~ N(0, I)`` down to level 0."""
    shape = tuple(int(s) for s in shape)
    rng = ChainStream(seed, chain)
    n = schedule.num_steps
    y = rng.complex_normal(shape, step=n, purpose=Purpose.INIT)
    for t in range(n, 0, -1):
        y = reverse_step(y, t, schedule, denoiser, rng)
        _check_finite(y, f"step {t}")
    return y


def sample_ksg(x_obs, mask, schedule: Schedule, denoiser, ksg_noise: bool, seed: int, chain: int = 0):
    """One k-space guided chain; the result satisfies ``M F y = x_obs``."""
    x_obs = as_image(x_obs, "observation")
    rng = ChainStream(seed, chain)
    n = schedule.num_steps
    y = rng.complex_normal(x_obs.shape, step=n, purpose=Purpose.INIT)
    for t in range(n, 0, -1):
        y = reverse_step(y, t, schedule, denoiser, rng)
        y = ksg_step(y, t - 1, x_obs, mask, schedule, ksg_noise, rng)
        _check_finite(y, f"chain {chain} step {t}")
    return y


def variance_map(samples) -> np.ndarray:
    """Per-pixel unbiased variance of ``|y|`` across samples (0 for one sample)."""
    if len(samples) == 0:
        raise InvalidArgumentError("variance_map needs at least one sample")
    shapes = {np.shape(s) for s in samples}
    if len(shapes) != 1:
        raise InvalidArgumentError(f"samples have mismatched shapes {sorted(shapes)}")
    mags = np.abs(np.stack([np.asarray(s) for s in samples]))
    if mags.shape[0] == 1:
        return np.zeros(mags.shape[1:])
    return mags.var(axis=0, ddof=1)


def c2f_reconstruct(x_obs, mask, full_schedule: Schedule, denoiser, config: SamplerConfig) -> ReconResult:
    """Coarse-to-fine reconstruction.

    Runs ``N`` guided chains on the re-spaced schedule, averages them, refines
    the average with the last ``T_refine`` steps of the full schedule using
    direct replacement. The result always ends with a direct replacement at
    level 0 (the last refinement step, the last chain step for ``N = 1``, or
    an explicit projection of the plain average). Any chain failure aborts
    the whole reconstruction.
    """
    x_obs = as_image(x_obs, "observation")
    _mask_entries(mask, x_obs.shape)
    if full_schedule.num_steps != config.T:
        raise InvalidArgumentError(
            f"config T={config.T} does not match schedule length {full_schedule.num_steps}"
        )
    coarse = respace(full_schedule, config.coarse_steps)
    timings = {}
    t0 = time.perf_counter()

    def run_chain(i):
        return sample_ksg(x_obs, mask, coarse, denoiser, config.ksg_noise, config.seed, chain=i)

    if config.workers > 1 and config.N > 1:
        with ThreadPoolExecutor(max_workers=min(config.workers, config.N)) as pool:
            futures = [pool.submit(run_chain, i) for i in range(config.N)]
            try:
                samples = [f.result() for f in futures]
            except BaseException:
                for f in futures:
                    f.cancel()
                raise
    else:
        samples = [run_chain(i) for i in range(config.N)]
    timings["coarse_s"] = time.perf_counter() - t0

    t1 = time.perf_counter()
    y = samples[0] if config.N == 1 else np.mean(np.stack(samples), axis=0)
    variance = variance_map(samples)
    if config.refine and config.T_refine > 0:
        rng = ChainStream(config.seed, REFINE_CHAIN)
        for t in range(config.T_refine, 0, -1):
            y = reverse_step(y, t, full_schedule, denoiser, rng, purpose=Purpose.REFINE)
            # The level-0 mix is the final direct replacement.
            y = ksg_step(y, t - 1, x_obs, mask, full_schedule, False, rng)
            _check_finite(y, f"refinement step {t}")
    elif config.N > 1:
        y = project(y, x_obs, mask)
    timings["refine_s"] = time.perf_counter() - t1
    timings["total_s"] = time.perf_counter() - t0

    metadata = {
        "config": asdict(config),
        "schedule": full_schedule.descriptor(),
        "coarse_schedule": coarse.descriptor(),
        "speedup_factor": speedup_factor(config),
        "timings": timings,
        "backend": _accel.BACKEND,
    }
    return ReconResult(
        mean=y,
        variance=variance,
        samples=samples if config.keep_samples else None,
        metadata=metadata,
    )
