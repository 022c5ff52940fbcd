"""Kernels and quadratures around the local time of the one-delta radius at zero.

All integrals over a radius use the substitution r = exp(s), which flattens
the log^2 r behaviour of K0(r)^2 near the origin, with an explicit break at
the kernel scale sqrt(eps).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, optimize, special

from .specfun import DomainError, ratio_khat1_k0

LOG_DEPTH = 60.0


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested tolerance."""


@dataclass(frozen=True)
class KernelParams:
    beta: float
    eps: float

    def __post_init__(self):
        if not (self.beta > 0.0 and self.eps > 0.0):
            raise DomainError("beta and eps must both be positive")


def _k0(x):
    return special.k0e(x) * np.exp(-x)


def kappa_eps(r, kp: KernelParams):
    """eps / ((eps + r^2)^2 K0(sqrt(2 beta (eps + r^2)))^2)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0.0):
        raise DomainError("kernel radius must be nonnegative")
    s = kp.eps + r * r
    k = _k0(np.sqrt(2.0 * kp.beta * s))
    out = kp.eps / (s * s * k * k)
    return float(out) if out.ndim == 0 else out


def speed_density_m0(r, beta: float):
    """Speed density 4 r K0(sqrt(2 beta) r)^2."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0.0):
        raise DomainError("speed density needs r > 0")
    k = _k0(math.sqrt(2.0 * beta) * r)
    out = 4.0 * r * k * k
    return float(out) if out.ndim == 0 else out


def _quad(fn, a, b, tol, points=None, limit=400):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, a, b, epsabs=0.0, epsrel=tol, limit=limit,
                                      points=points)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from exc
    return val, err


def _log_radius_integral(g: Callable[[float], float], upper: float, scale: float,
                         tol: float) -> float:
    """Integral of g over (0, upper] through r = exp(s), split at ``scale``."""
    top = math.log(upper)
    bottom = min(math.log(scale), top) - LOG_DEPTH
    mid = math.log(scale)
    pts = [mid] if bottom < mid < top else None

    def h(s):
        r = math.exp(s)
        return g(r) * r

    val, _ = _quad(h, bottom, top, tol, points=pts)
    return val


def bump(r):
    """Smooth test function exp(1 - 1/(1 - r^2)) on [0, 1), zero beyond, bump(0) = 1."""
    r = np.asarray(r, dtype=float)
    inside = np.abs(r) < 1.0
    safe = np.where(inside, r, 0.0)
    out = np.where(inside, np.exp(1.0 - 1.0 / (1.0 - safe * safe)), 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_limit_quadrature(f: Callable[[float], float], kp: KernelParams,
                            support: float = 1.0, quad_tol: float = 1e-10) -> float:
    """Integral of f(r) kappa_eps(r) m0(r) dr over [0, support]; tends to 2 f(0) as eps -> 0."""
    def g(r):
        return f(r) * kappa_eps(r, kp) * speed_density_m0(r, kp.beta)

    return _log_radius_integral(g, support, math.sqrt(kp.eps), quad_tol)


def kernel_limit_rescaled(f: Callable[[float], float], kp: KernelParams,
                          support: float = 1.0, quad_tol: float = 1e-10) -> float:
    """Same integral after r = sqrt(eps) u, written with the rescaled integrand.

    4 u K0(sqrt(2 beta eps) u)^2 / ((1 + u^2)^2 K0(sqrt(2 beta eps (1 + u^2)))^2) f(sqrt(eps) u).
    """
    root = math.sqrt(kp.eps)
    c = math.sqrt(2.0 * kp.beta * kp.eps)

    def g(u):
        num = _k0(c * u)
        den = _k0(c * math.sqrt(1.0 + u * u))
        return 4.0 * u * num * num / ((1.0 + u * u) ** 2 * den * den) * f(root * u)

    return _log_radius_integral(g, support / root, 1.0, quad_tol)


def kernel_mass(kp: KernelParams, support: float = 1.0, quad_tol: float = 1e-10) -> float:
    """Integral of kappa_eps m0 over [0, support]."""
    return kernel_limit_quadrature(lambda r: 1.0, kp, support, quad_tol)


def vanishing_integrand(variant: str, y, eps: float):
    """Integrand of the two vanishing integrals; nonnegative because khat1/K0 increases."""
    y = np.asarray(y, dtype=float)
    shifted = np.sqrt(eps + y * y)
    gap = ratio_khat1_k0(shifted) - ratio_khat1_k0(y)
    k0y = _k0(y)
    if variant == "first":
        lead = 1.0 / _k0(shifted)
    elif variant == "second":
        lead = 1.0 / k0y
    else:
        raise DomainError(f"variant must be 'first' or 'second', got {variant!r}")
    out = lead / (eps + y * y) * gap * y * k0y * k0y
    return float(out) if out.ndim == 0 else out


def vanishing_integral_oct(variant: str, upper: float, eps: float,
                           quad_tol: float = 1e-10) -> float:
    """Integral over [0, upper] of ``vanishing_integrand``; tends to 0 as eps -> 0."""
    if not (upper > 0.0 and eps > 0.0):
        raise DomainError("need upper > 0 and eps > 0")
    return _log_radius_integral(lambda y: vanishing_integrand(variant, y, eps),
                                upper, math.sqrt(eps), quad_tol)


def _log_g_integrand(u, x):
    """log of x^u / Gamma(u) where x = beta t; the density is e^{-x}/t times its integral."""
    return u * math.log(x) - special.gammaln(u)


def local_time_density_g(t: float, beta: float, quad_tol: float = 1e-10) -> float:
    """e^{-beta t} * integral over u > 0 of beta^u t^(u-1) / Gamma(u).

    The u range is cut where the integrand drops below 1e-16 of its peak,
    located by a bounded scalar search.
    """
    if not (t > 0.0 and beta > 0.0):
        raise DomainError("need t > 0 and beta > 0")
    x = beta * t
    upper = _u_cutoff(x)

    def h(u):
        return math.exp(_log_g_integrand(u, x) - x)

    val, _ = _quad(h, 0.0, upper, quad_tol, limit=200)
    return val / t


def _u_cutoff(x: float) -> float:
    hi = max(10.0, 4.0 * x + 50.0)
    peak = optimize.minimize_scalar(lambda u: -_log_g_integrand(u, x), bounds=(1e-12, hi),
                                    method="bounded")
    top = -peak.fun
    u = max(peak.x, 1.0)
    while _log_g_integrand(u, x) > top - math.log(1e16):
        u *= 1.5
    return u


def local_time_mean(t: float, beta: float, quad_tol: float = 1e-12) -> float:
    """Integral of g over [0, t], i.e. the mean local time from the origin.

    Integrating in time first gives the regularized lower incomplete gamma
    P(u, beta t), leaving one smooth integral over u.
    """
    if not (t > 0.0 and beta > 0.0):
        raise DomainError("need t > 0 and beta > 0")
    x = beta * t
    upper = _u_cutoff(x) + 10.0 * math.sqrt(x + 1.0)
    val, _ = _quad(lambda u: special.gammainc(u, x) if u > 0.0 else 1.0, 0.0, upper,
                   quad_tol, limit=200)
    return val


def local_time_laplace(q: float, beta: float) -> float:
    """Laplace transform of g at q: 1/log(1 + q/beta)."""
    return 1.0 / math.log1p(q / beta)


@lru_cache(maxsize=32)
def _g_table(t: float, beta: float, points: int = 400):
    s = np.geomspace(1e-10 * t, t, points)
    vals = np.array([local_time_density_g(float(v), beta, 1e-10) for v in s])
    return interpolate.CubicSpline(np.log(s), np.log(vals))


def _g_interp(s, t, beta):
    return math.exp(float(_g_table(t, beta)(math.log(s))))


def radial_pdf_f(r: float, t: float, beta: float, exponent_variant: str = "squared",
                 quad_tol: float = 1e-8) -> float:
    """Density of the one-delta radius at time t started from the origin.

    4 r K0(sqrt(2 beta) r) * integral over (0, t) of
    g(t - tau) / (2 tau) * exp(-beta tau - X / (2 tau)) dtau,
    with X = r for the "linear" variant and X = r^2 for the "squared" one.
    """
    if not (r > 0.0 and t > 0.0):
        raise DomainError("need r > 0 and t > 0")
    if exponent_variant == "linear":
        big_x = r
    elif exponent_variant == "squared":
        big_x = r * r
    else:
        raise DomainError("exponent_variant must be 'linear' or 'squared'")

    def heat(tau):
        return math.exp(-beta * tau - big_x / (2.0 * tau)) / (2.0 * tau)

    cut = 1e-10 * t
    inner, _ = _quad(lambda tau: _g_interp(t - tau, t, beta) * heat(tau), 0.0, t - cut,
                     max(quad_tol, 1e-9), points=[min(big_x, t / 2)], limit=400)
    inner += heat(t) * local_time_mean(cut, beta)
    return 4.0 * r * float(_k0(math.sqrt(2.0 * beta) * r)) * inner


def radial_pdf_mass(t: float, beta: float, exponent_variant: str,
                    quad_tol: float = 1e-6) -> float:
    """Integral over r > 0 of ``radial_pdf_f``; the consistent variant gives 1."""
    def g(r):
        return radial_pdf_f(r, t, beta, exponent_variant, quad_tol * 1e-1)

    top = 40.0 * math.sqrt(t) + 40.0
    return _log_radius_integral(g, top, math.sqrt(t), quad_tol)
