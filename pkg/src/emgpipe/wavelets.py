"""Daubechies filters and a periodized multilevel DWT."""
from functools import lru_cache
from math import comb

import numpy as np

from .errors import ArgumentError


@lru_cache(maxsize=None)
def daubechies_lowpass(n: int) -> tuple:
    """Minimum-phase Daubechies scaling filter with ``n`` vanishing moments.

    Built by spectral factorization: the roots of the Daubechies polynomial in
    ``y = sin^2(w/2)`` are mapped to z-plane zeros, and the ones inside the
    unit circle are kept. Coefficients sum to sqrt(2).
    """
    if n < 1:
        raise ArgumentError("Daubechies index must be >= 1")
    poly = [comb(n - 1 + k, k) for k in range(n)]
    h = np.array([1.0])
    for _ in range(n):
        h = np.convolve(h, [1.0, 1.0])
    if n > 1:
        y_roots = np.roots(poly[::-1])
        for y in y_roots:
            c = 1 - 2 * y
            d = np.sqrt(c * c - 1 + 0j)
            z = c + d if abs(c + d) < 1 else c - d
            h = np.convolve(h, [1.0, -z])
    h = np.real(h)
    h = h * np.sqrt(2) / h.sum()
    return tuple(h)


def quadrature_mirror(h) -> np.ndarray:
    h = np.asarray(h)
    g = h[::-1].copy()
    g[1::2] *= -1
    return g


def _periodic_step(x: np.ndarray, h: np.ndarray, g: np.ndarray):
    if x.shape[0] % 2:
        x = np.concatenate([x, x[-1:]], axis=0)
    n = x.shape[0]
    half = n // 2
    a = np.zeros((half,) + x.shape[1:])
    d = np.zeros_like(a)
    base = 2 * np.arange(half)
    for k in range(len(h)):
        taps = x[(base + k) % n]
        a += h[k] * taps
        d += g[k] * taps
    return a, d


def dwt_periodic(x, wavelet: int, levels: int):
    """Multilevel periodized DWT along axis 0.

    Returns ``(approximation, details)`` with details ordered coarsest first.
    An odd-length stage is extended by repeating its last sample.
    """
    h = np.asarray(daubechies_lowpass(wavelet))
    g = quadrature_mirror(h)
    a = np.asarray(x, dtype=np.float64)
    details = []
    for _ in range(levels):
        a, d = _periodic_step(a, h, g)
        details.append(d)
    return a, details[::-1]


def compute_mdwt(x, wavelet: int = 7, levels: int = 3) -> np.ndarray:
    """Per-level sums of absolute detail coefficients, coarsest first.

    Works along axis 0; the result has ``levels`` rows followed by any
    trailing dimensions of ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    need = 2 * wavelet * 2 ** levels
    if x.shape[0] < need:
        raise ArgumentError(f"mDWT db{wavelet} with {levels} levels needs >= {need} samples, got {x.shape[0]}")
    _, details = dwt_periodic(x, wavelet, levels)
    return np.stack([np.abs(d).sum(axis=0) for d in details])
