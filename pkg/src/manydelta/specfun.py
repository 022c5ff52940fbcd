"""Macdonald functions K0, K1 and the scaled forms used by every drift and weight.

Values come from the Cephes routines shipped with scipy.  The exponentially
scaled variants ``k0e``/``k1e`` make the large-argument regime and all ratios
overflow-safe, so nothing here has to subtract nearly equal exponentials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

LOG_DOMAIN_THRESHOLD = 30.0


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


@dataclass(frozen=True)
class SpecValue:
    value: float
    log_value: float


def _as_positive(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError(f"{name} must be positive and finite, got {x!r}")
    return arr


def _as_nonnegative(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
        raise DomainError(f"{name} must be nonnegative and finite, got {x!r}")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def k0(x):
    """K0(x) for x > 0."""
    arr = _as_positive(x)
    return _out(special.k0(arr), x)


def k1(x):
    """K1(x) for x > 0."""
    arr = _as_positive(x)
    return _out(special.k1(arr), x)


def log_k0(x):
    """Natural log of K0(x); finite for every positive finite x."""
    arr = _as_positive(x)
    return _out(np.log(special.k0e(arr)) - arr, x)


def log_k1(x):
    """Natural log of K1(x); finite for every positive finite x."""
    arr = _as_positive(x)
    return _out(np.log(special.k1e(arr)) - arr, x)


def k0_value(x: float) -> SpecValue:
    return SpecValue(k0(x), log_k0(x))


def k1_value(x: float) -> SpecValue:
    return SpecValue(k1(x), log_k1(x))


def khat(nu: int, x):
    """Scaled Macdonald function x**nu * K_nu(x) for nu in {0, 1}.

    ``khat(1, 0)`` is the continuous extension 1; ``khat(0, 0)`` diverges.
    """
    if nu == 0:
        return k0(x)
    if nu != 1:
        raise DomainError(f"nu must be 0 or 1, got {nu!r}")
    arr = _as_nonnegative(x)
    safe = np.where(arr > 0.0, arr, 1.0)
    val = np.where(arr > 0.0, safe * special.k1(safe), 1.0)
    return _out(val, x)


def g_nu(nu: int, big_r):
    """G_nu(R) = khat(nu, sqrt(R))."""
    arr = np.asarray(big_r, dtype=float)
    if np.any(arr < 0.0):
        raise DomainError(f"R must be nonnegative, got {big_r!r}")
    return khat(nu, np.sqrt(arr) if np.ndim(big_r) else math.sqrt(float(arr)))


def ratio_khat1_k0(x):
    """khat(1, x) / K0(x), strictly increasing in x.

    Above ``LOG_DOMAIN_THRESHOLD`` the quotient is assembled from logs of the
    scaled functions so that neither factor underflows.
    """
    arr = _as_positive(x)
    direct = arr * special.k1e(arr) / special.k0e(arr)
    big = arr >= LOG_DOMAIN_THRESHOLD
    if np.any(big):
        xb = np.where(big, arr, LOG_DOMAIN_THRESHOLD)
        logged = np.exp(np.log(xb) + np.log(special.k1e(xb)) - np.log(special.k0e(xb)))
        direct = np.where(big, logged, direct)
    return _out(direct, x)
