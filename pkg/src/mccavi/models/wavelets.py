"""Orthonormal periodic symlet-6 discrete wavelet transform.

Coefficients are ordered coarse to fine, ``[approx_L, detail_L, ..., detail_1]``,
the same layout as ``pywt.wavedec(..., mode="periodization")``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# symlet-6 decomposition low-pass filter
SYM6_LO = np.array([
    0.015404109327027373, 0.0034907120842174702, -0.11799011114819057, -0.048311742585633,
    0.4910559419267466, 0.787641141030194, 0.3379294217276218, -0.07263752278646252,
    -0.021060292512300564, 0.04472490177066578, 0.0017677118642428036, -0.007800708325034148,
])
# quadrature mirror: hi[j] = (-1)^(j+1) lo[L-1-j]
SYM6_HI = SYM6_LO[::-1] * np.array([(-1) ** (j + 1) for j in range(SYM6_LO.size)])

DEFAULT_LEVEL = 4


def padded_length(n: int, level: int = DEFAULT_LEVEL) -> int:
    block = 2**level
    return -(-n // block) * block


def _check_length(n, level):
    if n % (2**level):
        raise ValueError(f"length {n} is not a multiple of 2**{level}; zero-pad to "
                         f"{padded_length(n, level)} first (see padded_length)")


def _analysis_step(x):
    n = x.shape[0]
    shift = SYM6_LO.size // 2
    k2 = 2 * np.arange(n // 2)
    idx = (k2[:, None] + shift - np.arange(SYM6_LO.size)[None, :]) % n
    xs = x[idx]
    return xs @ SYM6_LO, xs @ SYM6_HI


def _synthesis_step(a, d):
    n = 2 * a.shape[0]
    shift = SYM6_LO.size // 2
    k2 = 2 * np.arange(n // 2)
    idx = (k2[:, None] + shift - np.arange(SYM6_LO.size)[None, :]) % n
    out = np.zeros((n,) + a.shape[1:])
    np.add.at(out, idx, SYM6_LO[None, :, None] * a[:, None] if a.ndim > 1 else SYM6_LO[None, :] * a[:, None])
    np.add.at(out, idx, SYM6_HI[None, :, None] * d[:, None] if d.ndim > 1 else SYM6_HI[None, :] * d[:, None])
    return out


def dwt_forward(y, level: int = DEFAULT_LEVEL) -> np.ndarray:
    """Coefficient vector of the same length as ``y`` (which must be a multiple of 2**level)."""
    y = np.asarray(y, dtype=float)
    _check_length(y.shape[0], level)
    details = []
    a = y
    for _ in range(level):
        a, d = _analysis_step(a)
        details.append(d)
    return np.concatenate([a] + details[::-1])


def dwt_inverse(coeffs, level: int = DEFAULT_LEVEL) -> np.ndarray:
    c = np.asarray(coeffs, dtype=float)
    n = c.shape[0]
    _check_length(n, level)
    m = n // 2**level
    a = c[:m]
    pos = m
    for _ in range(level):
        d = c[pos:pos + a.shape[0]]
        pos += a.shape[0]
        a = _synthesis_step(a, d)
    return a


@lru_cache(maxsize=8)
def _basis(n: int, level: int):
    return dwt_inverse(np.eye(n), level)


def basis_matrix(n: int, level: int = DEFAULT_LEVEL) -> np.ndarray:
    """``B`` with ``B @ coeffs == dwt_inverse(coeffs)``; orthogonal, so ``B.T`` is the forward map."""
    _check_length(n, level)
    return _basis(n, level).copy()


def coefficient_levels(n: int, level: int = DEFAULT_LEVEL) -> np.ndarray:
    """Scale index of each coefficient: 0 for the approximation, then level..1."""
    m = n // 2**level
    out = [np.zeros(m, dtype=int)]
    size = m
    for j in range(level, 0, -1):
        out.append(np.full(size, j))
        size *= 2
    return np.concatenate(out)
