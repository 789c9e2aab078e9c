"""Hot elementwise kernels, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. The active
implementation is picked once at import time:

* ``KSGDIFFUSE_PURE_NUMPY=1`` forces the numpy path;
* otherwise numba is used if it imports, else numpy.

Both twins are always importable as ``NUMPY_KERNELS`` / ``NUMBA_KERNELS`` so
tests and the benchmark can compare them side by side. Integer outputs
(Philox words) are bit-identical across backends; float outputs agree to a
few ulp (libm ``log``/``cos`` may differ by one ulp).
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

_FORCE_NUMPY = os.environ.get("KSGDIFFUSE_PURE_NUMPY", "").strip() not in ("", "0")
BACKEND = "numba" if HAVE_NUMBA and not _FORCE_NUMPY else "numpy"

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S5 = np.uint64(5)
_S6 = np.uint64(6)
_TWO26 = 67108864.0
_INV_TWO53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


def _philox_rounds(c0, c1, c2, c3, k0, k1):
    # Philox4x32-10. Works on uint64 scalars (numba) and uint64 arrays (numpy);
    # every value is kept below 2**32 so the 32x32 products fit in 64 bits.
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        n0 = ((p1 >> _S32) ^ c1 ^ k0) & _MASK32
        n1 = p1 & _MASK32
        n2 = ((p0 >> _S32) ^ c3 ^ k1) & _MASK32
        n3 = p0 & _MASK32
        c0, c1, c2, c3 = n0, n1, n2, n3
        k0 = (k0 + _W0) & _MASK32
        k1 = (k1 + _W1) & _MASK32
    return c0, c1, c2, c3


# ---------------------------------------------------------------- numpy twins


def _np_philox_words(n_blocks, k0, k1, c1, c2, c3):
    u = np.uint64
    c0 = np.arange(n_blocks, dtype=np.uint64)
    shape = c0.shape
    w = _philox_rounds(
        c0,
        np.full(shape, u(c1)),
        np.full(shape, u(c2)),
        np.full(shape, u(c3)),
        np.full(shape, u(k0)),
        np.full(shape, u(k1)),
    )
    return np.stack(w, axis=1)


def _np_uniform_pairs(w):
    u1 = ((w[:, 0] >> _S5).astype(np.float64) * _TWO26 + (w[:, 1] >> _S6).astype(np.float64) + 0.5) * _INV_TWO53
    u2 = ((w[:, 2] >> _S5).astype(np.float64) * _TWO26 + (w[:, 3] >> _S6).astype(np.float64) + 0.5) * _INV_TWO53
    return u1, u2


def _np_uniforms(n, k0, k1, c1, c2, c3):
    w = _np_philox_words((n + 1) // 2, k0, k1, c1, c2, c3)
    u1, u2 = _np_uniform_pairs(w)
    out = np.empty(2 * w.shape[0])
    out[0::2] = u1
    out[1::2] = u2
    return out[:n]


def _np_normals(n, k0, k1, c1, c2, c3):
    w = _np_philox_words((n + 1) // 2, k0, k1, c1, c2, c3)
    u1, u2 = _np_uniform_pairs(w)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = _TWO_PI * u2
    out = np.empty(2 * w.shape[0])
    out[0::2] = r * np.cos(theta)
    out[1::2] = r * np.sin(theta)
    return out[:n]


def _np_reverse_update(y, eps, z, inv_sqrt_alpha, eps_coef, sigma):
    out = inv_sqrt_alpha * (y - eps_coef * eps)
    if sigma != 0.0:
        out = out + sigma * z
    return out


def _np_gaussian_eps(y, mu, sqrt_ab, one_minus_ab, s2):
    m_post = (sqrt_ab * s2 * y + one_minus_ab * mu) / (sqrt_ab * sqrt_ab * s2 + one_minus_ab)
    return (y - sqrt_ab * m_post) / math.sqrt(one_minus_ab)


def _np_replace(k, k_obs, mask):
    return np.where(mask, k_obs, k)


NUMPY_KERNELS = SimpleNamespace(
    name="numpy",
    philox_words=_np_philox_words,
    uniforms=_np_uniforms,
    normals=_np_normals,
    reverse_update=_np_reverse_update,
    gaussian_eps=_np_gaussian_eps,
    replace=_np_replace,
)


# ---------------------------------------------------------------- numba twins

if HAVE_NUMBA:
    _nb_rounds = numba.njit(cache=True, inline="always")(_philox_rounds)

    @numba.njit(cache=True, nogil=True)
    def _nb_philox_words(n_blocks, k0, k1, c1, c2, c3):
        out = np.empty((n_blocks, 4), dtype=np.uint64)
        uk0, uk1 = np.uint64(k0), np.uint64(k1)
        uc1, uc2, uc3 = np.uint64(c1), np.uint64(c2), np.uint64(c3)
        for i in range(n_blocks):
            a, b, c, d = _nb_rounds(np.uint64(i), uc1, uc2, uc3, uk0, uk1)
            out[i, 0] = a
            out[i, 1] = b
            out[i, 2] = c
            out[i, 3] = d
        return out

    @numba.njit(cache=True, inline="always")
    def _nb_pair(a, b):
        return (float(a >> _S5) * _TWO26 + float(b >> _S6) + 0.5) * _INV_TWO53

    @numba.njit(cache=True, nogil=True)
    def _nb_uniforms(n, k0, k1, c1, c2, c3):
        out = np.empty(n)
        uk0, uk1 = np.uint64(k0), np.uint64(k1)
        uc1, uc2, uc3 = np.uint64(c1), np.uint64(c2), np.uint64(c3)
        for i in range((n + 1) // 2):
            a, b, c, d = _nb_rounds(np.uint64(i), uc1, uc2, uc3, uk0, uk1)
            out[2 * i] = _nb_pair(a, b)
            if 2 * i + 1 < n:
                out[2 * i + 1] = _nb_pair(c, d)
        return out

    @numba.njit(cache=True, nogil=True)
    def _nb_normals(n, k0, k1, c1, c2, c3):
        out = np.empty(n)
        uk0, uk1 = np.uint64(k0), np.uint64(k1)
        uc1, uc2, uc3 = np.uint64(c1), np.uint64(c2), np.uint64(c3)
        for i in range((n + 1) // 2):
            a, b, c, d = _nb_rounds(np.uint64(i), uc1, uc2, uc3, uk0, uk1)
            r = math.sqrt(-2.0 * math.log(_nb_pair(a, b)))
            theta = _TWO_PI * _nb_pair(c, d)
            out[2 * i] = r * math.cos(theta)
            if 2 * i + 1 < n:
                out[2 * i + 1] = r * math.sin(theta)
        return out

    @numba.njit(cache=True, nogil=True)
    def _nb_reverse_update_flat(y, eps, z, inv_sqrt_alpha, eps_coef, sigma, out):
        if sigma != 0.0:
            for i in range(y.size):
                out[i] = inv_sqrt_alpha * (y[i] - eps_coef * eps[i]) + sigma * z[i]
        else:
            for i in range(y.size):
                out[i] = inv_sqrt_alpha * (y[i] - eps_coef * eps[i])

    @numba.njit(cache=True, nogil=True)
    def _nb_gaussian_eps_flat(y, mu, sqrt_ab, one_minus_ab, s2, out):
        denom = sqrt_ab * sqrt_ab * s2 + one_minus_ab
        root = math.sqrt(one_minus_ab)
        for i in range(y.size):
            m_post = (sqrt_ab * s2 * y[i] + one_minus_ab * mu[i]) / denom
            out[i] = (y[i] - sqrt_ab * m_post) / root

    @numba.njit(cache=True, nogil=True)
    def _nb_replace_flat(k, k_obs, mask, out):
        for i in range(k.size):
            out[i] = k_obs[i] if mask[i] else k[i]

    def _flat(a, dtype=None):
        return np.ascontiguousarray(a, dtype=dtype).reshape(-1)

    def _nb_reverse_update(y, eps, z, inv_sqrt_alpha, eps_coef, sigma):
        y = np.asarray(y, dtype=np.complex128)
        out = np.empty(y.shape, dtype=np.complex128)
        zf = _flat(y if z is None else z, np.complex128)
        _nb_reverse_update_flat(
            _flat(y), _flat(eps, np.complex128), zf,
            float(inv_sqrt_alpha), float(eps_coef), float(sigma), out.reshape(-1),
        )
        return out

    def _nb_gaussian_eps(y, mu, sqrt_ab, one_minus_ab, s2):
        y = np.asarray(y, dtype=np.complex128)
        out = np.empty(y.shape, dtype=np.complex128)
        mu = np.broadcast_to(np.asarray(mu, dtype=np.complex128), y.shape)
        _nb_gaussian_eps_flat(
            _flat(y), _flat(mu), float(sqrt_ab), float(one_minus_ab), float(s2), out.reshape(-1)
        )
        return out

    def _nb_replace(k, k_obs, mask):
        k = np.asarray(k, dtype=np.complex128)
        out = np.empty(k.shape, dtype=np.complex128)
        _nb_replace_flat(_flat(k), _flat(k_obs, np.complex128), _flat(mask, np.bool_), out.reshape(-1))
        return out

    NUMBA_KERNELS = SimpleNamespace(
        name="numba",
        philox_words=_nb_philox_words,
        uniforms=_nb_uniforms,
        normals=_nb_normals,
        reverse_update=_nb_reverse_update,
        gaussian_eps=_nb_gaussian_eps,
        replace=_nb_replace,
    )
else:  # pragma: no cover
    NUMBA_KERNELS = None


KERNELS = NUMBA_KERNELS if BACKEND == "numba" else NUMPY_KERNELS
