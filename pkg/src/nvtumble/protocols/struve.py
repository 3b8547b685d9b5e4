"""Struve function of order -1 for real non-negative argument."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from ..errors import ValidationError

_SERIES_MAX_X = 8.0
_LAGUERRE_U, _LAGUERRE_W = np.polynomial.laguerre.laggauss(60)


def _series(x: float) -> float:
    # sum_k (-1)^k (x/2)^(2k) / (Gamma(k + 3/2) Gamma(k + 1/2))
    term = 1.0 / (math.gamma(1.5) * math.gamma(0.5))
    total = 0.0
    q = 0.25 * x * x
    for k in range(200):
        total += term
        term *= -q / ((k + 1.5) * (k + 0.5))
        if abs(term) < 1e-17 * max(1.0, abs(total)):
            break
    return total


def _large(x: float) -> float:
    # H_{-1}(x) = -Y_1(x) - 2/(pi x) int_0^inf e^{-x t} (1 + t^2)^{-3/2} dt, with u = x t
    integral = float(np.sum(_LAGUERRE_W * (1.0 + (_LAGUERRE_U / x) ** 2) ** -1.5)) / x
    return float(-special.y1(x) - 2.0 / (math.pi * x) * integral)


def struve_Hm1(x):
    """H_{-1}(x) for x >= 0 (scalar or array).

    Power series below x = 8; above it the Bessel Y_1 term plus a
    Gauss-Laguerre evaluation of the remaining Laplace-type integral.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError("struve_Hm1 is defined here for finite x >= 0")
    out = np.array([_series(v) if v <= _SERIES_MAX_X else _large(v) for v in arr.ravel()]).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out
