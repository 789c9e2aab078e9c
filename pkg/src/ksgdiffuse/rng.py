"""Counter-based random streams.

Every draw is a pure function of ``(seed, chain, step, purpose)``: the 64-bit
seed is the Philox key and the remaining three coordinates fill the upper
counter words, the lowest word enumerates blocks inside one draw. Nothing is
carried between draws, so results never depend on how many chains run at
once or in which order they are scheduled.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import InvalidArgumentError

_U32 = 0xFFFFFFFF
_U64 = 0xFFFFFFFFFFFFFFFF


class Purpose(enum.IntEnum):
    INIT = 1
    REVERSE = 2
    KSG = 3
    REFINE = 4
    MASK_CARTESIAN = 16
    MASK_GAUSSIAN = 17
    PHANTOM = 32


# Chain id reserved for the single refinement chain of a reconstruction.
REFINE_CHAIN = _U32


def split_seed(seed: int) -> tuple[int, int]:
    s = int(seed) & _U64
    return s & _U32, s >> 32


def _check_word(name, value):
    value = int(value)
    if not 0 <= value <= _U32:
        raise InvalidArgumentError(f"{name} must fit in 32 bits, got {value}")
    return value


def standard_normal(n: int, seed: int, chain: int = 0, step: int = 0, purpose: int = 0, kernels=None) -> np.ndarray:
    """``n`` i.i.d. N(0, 1) draws for one (seed, chain, step, purpose) cell."""
    k = kernels or _accel.KERNELS
    k0, k1 = split_seed(seed)
    return k.normals(
        int(n), k0, k1, _check_word("step", step), _check_word("chain", chain), _check_word("purpose", purpose)
    )


def uniform(n: int, seed: int, chain: int = 0, step: int = 0, purpose: int = 0, kernels=None) -> np.ndarray:
    """``n`` i.i.d. draws from the open interval (0, 1)."""
    k = kernels or _accel.KERNELS
    k0, k1 = split_seed(seed)
    return k.uniforms(
        int(n), k0, k1, _check_word("step", step), _check_word("chain", chain), _check_word("purpose", purpose)
    )


@dataclass(frozen=True)
class ChainStream:
    """The private random stream of one sampling chain."""

    seed: int
    chain: int = 0

    def complex_normal(self, shape, step: int, purpose: Purpose, variance: float = 1.0) -> np.ndarray:
        """Complex field whose real and imaginary parts are i.i.d. N(0, variance)."""
        shape = tuple(int(s) for s in shape)
        size = int(np.prod(shape))
        z = standard_normal(2 * size, self.seed, self.chain, step, purpose)
        out = (z[0::2] + 1j * z[1::2]).reshape(shape)
        if variance != 1.0:
            out *= np.sqrt(variance)
        return out
