"""Symmetric stable densities: the kernel of u_t + (-Delta)^(sigma/2) u = 0.

``p_sigma(y) = (1/pi) int_0^inf cos(k y) exp(-k^sigma) dk`` (N = 1) is
tabulated once per order on |y| <= 8. The table uses composite
Gauss-Legendre quadrature of the Fourier integral, with panels graded
toward k = 0 where exp(-k^sigma) is not smooth. A cubic spline
interpolates it. Beyond the table the series
``(1/pi) sum_n (-1)^(n+1) Gamma(n sigma + 1)/n! sin(n pi sigma/2) y^(-n sigma - 1)``
is used: convergent for sigma < 1, asymptotic otherwise.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammaln, zeta

Y_TABLE = 8.0
TABLE_STEP = 1.0 / 128.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _panels(K: float, width: float) -> np.ndarray:
    """Panel edges on [0, K]: geometric down to 2^-40 near 0, then uniform."""
    geo = 2.0 ** -np.arange(40, 0, -1)
    geo = geo[geo < K]
    uni = np.arange(1.0, K, width)
    return np.concatenate([[0.0], geo, uni, [K]])


def fourier_integral(y: np.ndarray, sigma: float, t: float = 1.0, chunk: int = 64) -> np.ndarray:
    """(1/pi) int_0^K cos(k y) exp(-t k^sigma) dk by composite Gauss-Legendre.

    K is chosen so that exp(-t K^sigma) < 1e-18; panels are at most
    pi/(2 max|y|) wide so every panel sees a quarter period or less.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    K = (42.0 / t) ** (1.0 / sigma)
    width = min(1.0, 0.5 * math.pi / max(1e-3, float(np.max(np.abs(y)))))
    edges = _panels(K, width)
    a = edges[:-1, None]
    b = edges[1:, None]
    k = (0.5 * (b - a) * _GL_NODES[None, :] + 0.5 * (a + b)).ravel()
    wk = (0.5 * (b - a) * _GL_WEIGHTS[None, :]).ravel() * np.exp(-t * k ** sigma)
    out = np.empty(y.size)
    for s in range(0, y.size, chunk):
        yy = y[s:s + chunk]
        out[s:s + chunk] = np.cos(np.outer(yy, k)) @ wk
    return out / math.pi


def tail_series(y: np.ndarray, sigma: float, max_terms: int = 200) -> np.ndarray:
    """Large-|y| expansion of p_sigma, summed until the terms stop shrinking."""
    y = np.abs(np.atleast_1d(np.asarray(y, dtype=float)))
    n = np.arange(1, max_terms + 1, dtype=float)[:, None]
    logmag = gammaln(n * sigma + 1.0) - gammaln(n + 1.0) - (n * sigma + 1.0) * np.log(y)[None, :]
    mag = np.exp(logmag)
    keep = np.ones_like(mag, dtype=bool)
    if sigma >= 1.0:
        # asymptotic series: stop at the smallest term
        grows = np.zeros_like(keep)
        grows[1:] = mag[1:] > mag[:-1]
        keep = ~np.logical_or.accumulate(grows, axis=0)
    terms = np.where(keep, (-1.0) ** (n + 1) * np.sin(n * math.pi * sigma / 2.0) * mag, 0.0)
    return terms.sum(axis=0) / math.pi


class StableProfile:
    """Unit-time density p_sigma on the line, callable on arrays."""

    def __init__(self, sigma: float):
        if not 0.0 < sigma < 2.0:
            raise ValueError(f"sigma must lie in (0, 2), got {sigma}")
        self.sigma = float(sigma)
        n = int(round(Y_TABLE / TABLE_STEP))
        yt = np.arange(-n, n + 1) * TABLE_STEP
        half = fourier_integral(yt[n:], self.sigma)
        half[0] = math.gamma(1.0 + 1.0 / self.sigma) / math.pi
        vals = np.concatenate([half[:0:-1], half])
        self._spline = CubicSpline(yt, vals, bc_type="not-a-knot")
        self.peak = float(half[0])

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ay = np.abs(y)
        out = np.empty_like(ay)
        inner = ay <= Y_TABLE
        out[inner] = self._spline(ay[inner])
        if (~inner).any():
            out[~inner] = tail_series(ay[~inner], self.sigma)
        return np.maximum(out, 0.0)

    def at_time(self, x, t: float) -> np.ndarray:
        """P(x, t) = t^(-1/sigma) p(x t^(-1/sigma))."""
        s = t ** (-1.0 / self.sigma)
        return s * self(np.asarray(x, dtype=float) * s)

    def periodized(self, x, t: float, period: float, images: int = 200) -> np.ndarray:
        """sum_j P(x + j period, t); far images through the leading tail term."""
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j in range(-images, images + 1):
            total += self.at_time(x + j * period, t)
        # remaining images: P ~ c t |z|^(-1-sigma) with c = Gamma(1+sigma) sin(pi sigma/2)/pi
        c = math.gamma(1.0 + self.sigma) * math.sin(math.pi * self.sigma / 2.0) / math.pi
        s = 1.0 + self.sigma
        frac = x / period
        total += c * t * period ** (-s) * (zeta(s, images + 1 + frac) + zeta(s, images + 1 - frac))
        return total


@lru_cache(maxsize=16)
def stable_profile(sigma: float) -> StableProfile:
    return StableProfile(sigma)


def poisson_kernel(sigma: float, x, t: float):
    """Kernel of exp(-t(-Delta)^(sigma/2)) on the line; zero for t < 0.

    Raises
    ------
    ValueError
        At t = 0, where the kernel is a Dirac mass.
    """
    if t == 0:
        raise ValueError("the kernel is a Dirac mass at t = 0")
    if t < 0:
        return np.zeros_like(np.asarray(x, dtype=float)) if np.ndim(x) else 0.0
    out = stable_profile(float(sigma)).at_time(x, t)
    return float(out) if np.ndim(x) == 0 else out
