"""Diffusion noise schedules.

A :class:`Schedule` stores per-step tables for steps ``t = 1..T`` in arrays
indexed ``t - 1``. Re-spaced schedules keep the original timestep label of
every retained step in :attr:`Schedule.timesteps`, so a trained denoiser can
be queried with the labels it was trained on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


def _posterior_variance(beta: np.ndarray, alpha_bar: np.ndarray) -> np.ndarray:
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    sigma2 = (1.0 - prev) / (1.0 - alpha_bar) * beta
    sigma2[0] = 0.0
    return sigma2


@dataclass(frozen=True, eq=False)
class Schedule:
    """Immutable diffusion schedule.

    Attributes:
        beta: per-step noise variance.
        alpha: ``1 - beta``.
        alpha_bar: cumulative product of ``alpha``.
        sigma2: reverse-step variance ``(1 - abar[t-1]) / (1 - abar[t]) * beta[t]``
            with ``abar[0] = 1``, hence ``sigma2[0] == 0``.
        timesteps: original timestep label (1-based) of every step.
        kind: ``"linear"``, ``"cosine"`` or ``"respaced"``.
        parent: descriptor of the schedule this one was re-spaced from.
    """

    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma2: np.ndarray
    timesteps: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    parent: dict | None = None

    @property
    def num_steps(self) -> int:
        return int(self.beta.shape[0])

    def __len__(self):
        return self.num_steps

    def alpha_bar_prev(self, t: int) -> float:
        """``abar`` one step below position ``t`` (1 at ``t = 1``)."""
        self._check_position(t)
        return 1.0 if t == 1 else float(self.alpha_bar[t - 2])

    def alpha_bar_level(self, t: int) -> float:
        """``abar`` at position ``t`` where level 0 is the clean image (``abar = 1``)."""
        if t == 0:
            return 1.0
        self._check_position(t)
        return float(self.alpha_bar[t - 1])

    def position_of(self, timestep: int) -> int:
        """1-based position of an original timestep label in this schedule."""
        i = int(np.searchsorted(self.timesteps, timestep))
        if i >= self.num_steps or self.timesteps[i] != timestep:
            raise InvalidArgumentError(f"timestep {timestep} is not part of this {self.kind} schedule")
        return i + 1

    def alpha_bar_at(self, timestep: int) -> float:
        """``abar`` for an original timestep label."""
        return float(self.alpha_bar[self.position_of(timestep) - 1])

    def _check_position(self, t):
        if not 1 <= t <= self.num_steps:
            raise InvalidArgumentError(f"step {t} outside 1..{self.num_steps}")

    def descriptor(self) -> dict:
        d = {"kind": self.kind, "num_steps": self.num_steps, **self.params}
        if self.parent is not None:
            d["parent"] = self.parent
        return d

    def table(self) -> dict:
        """Plain-list dump used by ``schedule dump``."""
        return {
            "schedule": self.descriptor(),
            "timesteps": [int(t) for t in self.timesteps],
            "beta": self.beta.tolist(),
            "alpha": self.alpha.tolist(),
            "alpha_bar": self.alpha_bar.tolist(),
            "sigma2": self.sigma2.tolist(),
        }


def _from_beta(beta, kind, params) -> Schedule:
    beta = np.asarray(beta, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return Schedule(
        beta=_frozen(beta),
        alpha=_frozen(alpha),
        alpha_bar=_frozen(alpha_bar),
        sigma2=_frozen(_posterior_variance(beta, alpha_bar)),
        timesteps=_frozen_int(np.arange(1, beta.shape[0] + 1)),
        kind=kind,
        params=params,
    )


def _frozen_int(a) -> np.ndarray:
    a = np.array(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _check_steps(T):
    if isinstance(T, bool) or int(T) != T or T < 1:
        raise InvalidArgumentError(f"number of steps must be a positive integer, got {T!r}")
    return int(T)


def new_linear(T: int, beta_start: float, beta_end: float) -> Schedule:
    """Betas linearly interpolated from ``beta_start`` to ``beta_end`` inclusive."""
    T = _check_steps(T)
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidArgumentError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}"
        )
    beta = np.linspace(beta_start, beta_end, T)
    return _from_beta(beta, "linear", {"beta_start": float(beta_start), "beta_end": float(beta_end)})


def _cosine_f(t, T, s=COSINE_OFFSET):
    return np.cos((t / T + s) / (1.0 + s) * math.pi / 2.0) ** 2


def new_cosine(T: int) -> Schedule:
    """Cosine schedule: ``abar(t) = f(t) / f(0)`` with betas clipped at 0.999.

    ``alpha_bar`` is rebuilt from the clipped betas so that the stored table is
    always the exact cumulative product of ``alpha``.
    """
    T = _check_steps(T)
    t = np.arange(T + 1, dtype=np.float64)
    abar = _cosine_f(t, T) / _cosine_f(0.0, T)
    beta = np.minimum(1.0 - abar[1:] / abar[:-1], MAX_BETA)
    return _from_beta(beta, "cosine", {})


def respace(s: Schedule, num_substeps: int) -> Schedule:
    """Keep ``num_substeps`` evenly spaced steps of ``s``.

    The retained labels are ``floor(j * T / n)`` for ``j = 1..n``, which always
    ends at ``T``. Their ``alpha_bar`` values are copied unchanged and the betas
    are recomputed from consecutive ratios, so the marginal at every retained
    step matches the parent.
    """
    n = _check_steps(num_substeps)
    T = s.num_steps
    if n > T:
        raise InvalidArgumentError(f"cannot respace {T} steps into {n}")
    positions = (np.arange(1, n + 1, dtype=np.int64) * T) // n
    alpha_bar = np.array(s.alpha_bar[positions - 1])
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    beta = 1.0 - alpha_bar / prev
    alpha = alpha_bar / prev
    return Schedule(
        beta=_frozen(beta),
        alpha=_frozen(alpha),
        alpha_bar=_frozen(alpha_bar),
        sigma2=_frozen(_posterior_variance(beta, alpha_bar)),
        timesteps=_frozen_int(s.timesteps[positions - 1]),
        kind="respaced",
        params={"num_substeps": n},
        parent=s.descriptor(),
    )


def from_name(kind: str, T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    if kind == "cosine":
        return new_cosine(T)
    if kind == "linear":
        return new_linear(T, beta_start, beta_end)
    raise InvalidArgumentError(f"unknown schedule kind {kind!r}")
