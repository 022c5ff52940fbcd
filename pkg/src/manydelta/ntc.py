"""No-simultaneous-contact diagnostics: reciprocal sums, Bessel lower bounds, path scans."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import partial
from typing import Sequence

import numpy as np

from . import _backend, mc
from .model import ConfigError, Edge, ModelParams, edge_index, edges, sigma_matrix
from .sde import (
    PathRecord, SimConfig, brownian_particles, simulate_many_delta, simulate_one_delta,
)
from .specfun import DomainError


@dataclass(frozen=True)
class Dimension:
    d: float
    admissible: bool


@dataclass(frozen=True)
class NscScanResult:
    j_level: int
    min_sum: float
    violation_count: int
    threshold: float

    @property
    def violated(self) -> bool:
        return self.violation_count > 0


@dataclass(frozen=True)
class ComparisonReport:
    sigma_k: float
    tau_m: float
    fraction_dominated: float
    grid_points: int
    clamp_events: int

    def to_dict(self) -> dict:
        return {"sigma_k": self.sigma_k, "tau_m": self.tau_m,
                "fraction_dominated": self.fraction_dominated,
                "grid_points": self.grid_points, "clamp_events": self.clamp_events}


def reciprocal_sum_gap(xs: Sequence[float]) -> float:
    """sum 1/x_k - n^2 / sum x_k, nonnegative and zero only for equal entries."""
    arr = np.asarray(xs, dtype=float)
    if arr.size < 2:
        raise DomainError("need at least two entries")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise DomainError("entries must be positive and finite")
    if np.all(arr == arr[0]):
        return 0.0
    mean = arr.mean()
    # sum 1/x - n/mean = sum (x - mean)^2 / (x mean^2), exact at equality
    return float(np.sum((arr - mean) ** 2 / (arr * mean * mean)))


def max_clock_rate(n0: int) -> float:
    """Largest quadratic-variation rate of a sum of n0 radial Brownian motions."""
    return n0 + n0 * (n0 - 1) / 2.0


def dimension_d(n0: int, alpha: float) -> Dimension:
    """Lower-bound Bessel dimension n0^2 (1 - 2 alpha) / (n0 + n0 (n0 - 1)/2) + 1."""
    if int(n0) != n0 or n0 < 2:
        raise DomainError("n0 must be an integer >= 2")
    if not alpha >= 0.0:
        raise DomainError("alpha must be nonnegative")
    lead = n0 * n0 * (1.0 - 2.0 * alpha) / max_clock_rate(n0)
    return Dimension(lead + 1.0, lead >= 1.0)


def clock_process(radial_paths: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Cumulative sum of squared increments of sum_j B^j.

    ``radial_paths`` has one row per grid time and ``noise`` one row of dB^j
    per step; they must describe the same grid.
    """
    radial_paths = np.asarray(radial_paths, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if noise.ndim == 1:
        noise = noise[:, None]
    if radial_paths.ndim == 1:
        radial_paths = radial_paths[:, None]
    if radial_paths.shape[0] != noise.shape[0] + 1 or radial_paths.shape[1] != noise.shape[1]:
        raise ConfigError("radius paths and noise increments are on different grids")
    summed = noise.sum(axis=1)
    return np.r_[0.0, np.cumsum(summed * summed)]


def conditional_clock(separations: np.ndarray, subset: Sequence[Edge], times: np.ndarray,
                      n: int) -> np.ndarray:
    """Clock from the conditional covariance of the B^j at left endpoints.

    d<B^j, B^k> = (sigma(j).sigma(k)/2) Re(Z^j conj Z^k)/(|Z^j||Z^k|) dt.
    """
    idx = [edge_index(e) for e in subset]
    z = separations[:-1][:, idx]
    unit = z / np.abs(z)
    sig = sigma_matrix(n)[np.ix_(idx, idx)] / 2.0
    cos = np.real(unit[:, :, None] * np.conj(unit[:, None, :]))
    rate = np.einsum("tjk,jk->t", cos, sig)
    return np.r_[0.0, np.cumsum(rate * np.diff(times))]


def clock_rate(noise: np.ndarray, dts: np.ndarray) -> tuple[float, float]:
    """Average rate of the clock and its standard error from per-step samples."""
    summed = np.asarray(noise, dtype=float)
    if summed.ndim == 2:
        summed = summed.sum(axis=1)
    dts = np.asarray(dts, dtype=float)
    total = dts.sum()
    rate = float(np.sum(summed * summed) / total)
    # weights dt/total on per-step rates; each rate has variance 2 rate^2
    se = float(math.sqrt(np.sum((dts / total) ** 2) * 2.0) * rate)
    return rate, se


def inverse_clock(clock: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Grid index of gamma(l) = sup{t: clock_t <= l}, held at the path end."""
    clock = np.asarray(clock, dtype=float)
    if np.any(np.diff(clock) < 0.0):
        raise ConfigError("clock must be nondecreasing")
    idx = np.searchsorted(clock, np.asarray(levels, dtype=float), side="right") - 1
    return np.clip(idx, 0, len(clock) - 1)


def time_changed_radius(sum_path: np.ndarray, clock: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """rho^(2)_l = rho at the right-continuous inverse of the clock."""
    return np.asarray(sum_path, dtype=float)[inverse_clock(clock, levels)]


def lower_bessel_compare(sum_path: np.ndarray, clock: np.ndarray, dimension: float, k: int,
                         m: int, sum_noise: np.ndarray, radius_floor: float = 1e-9,
                         tol: float = 1e-9, kernels=None) -> ComparisonReport:
    """Compare the time-changed radius sum with a Bessel process of ``dimension``.

    Both run on the clock grid.  The Bessel process starts at the first grid
    level where the radius sum reaches 1/k, is driven by the same summed
    noise increments, and is compared up to the first time either falls to 1/m.
    ``tol`` absorbs rounding when the two paths coincide.
    """
    if not dimension >= 2.0:
        raise DomainError("Bessel dimension must be at least 2")
    rho = np.asarray(sum_path, dtype=float)
    clock = np.asarray(clock, dtype=float)
    dbs = np.asarray(sum_noise, dtype=float)
    if dbs.ndim == 2:
        dbs = dbs.sum(axis=1)
    if not (len(rho) == len(clock) == len(dbs) + 1):
        raise ConfigError("radius sum, clock and noise must share one grid")
    start = np.flatnonzero(rho >= 1.0 / k)
    if start.size == 0:
        return ComparisonReport(math.inf, math.inf, 1.0, 0, 0)
    s = int(start[0])
    kern = kernels or _backend.kernels
    lower, clamps = kern.integrate_bessel(float(dimension), float(rho[s]),
                                          np.ascontiguousarray(np.diff(clock)[s:]),
                                          np.ascontiguousarray(dbs[s:]), radius_floor)
    upper = rho[s:]
    below = np.flatnonzero(np.minimum(lower, upper) <= 1.0 / m)
    stop = int(below[0]) if below.size else len(upper) - 1
    window = slice(0, stop + 1)
    dominated = np.mean(lower[window] <= upper[window] + tol)
    return ComparisonReport(float(clock[s]), float(clock[s + stop]), float(dominated),
                            stop + 1, int(clamps))


def nsc_scan(path: PathRecord, j_level: int, threshold: float) -> NscScanResult:
    """Scan every grid time for the sum of the j smallest pair radii."""
    m = len(edges(path.n))
    if not 2 <= j_level <= m:
        raise ConfigError(f"j_level must lie in [2, {m}]")
    r = np.abs(path.separations())
    smallest = np.partition(r, j_level - 1, axis=1)[:, :j_level].sum(axis=1) if j_level < m \
        else r.sum(axis=1)
    return NscScanResult(j_level, float(smallest.min()), int(np.sum(smallest < threshold)),
                         threshold)


@dataclass(frozen=True)
class PairSum:
    """Sum of radii over a subset of pairs with its summed noise and clock."""

    times: np.ndarray
    rho: np.ndarray
    noise: np.ndarray
    clock: np.ndarray


def pair_sum_process(path: PathRecord, subset: Sequence[Edge],
                     clock: str = "sampled") -> PairSum:
    """rho = sum of |Z^j| over ``subset`` along a recorded path.

    ``clock="sampled"`` uses squared summed increments, ``"conditional"`` the
    covariance rate at left endpoints, which has no sampling noise.
    """
    idx = [edge_index(e) for e in subset]
    rel = path.separations()
    r = np.abs(rel[:, idx])
    dw = path.relative_noise()[:, idx]
    db = np.real(np.conj(rel[:-1, idx]) / r[:-1] * dw)
    if clock == "sampled":
        clk = clock_process(r, db)
    elif clock == "conditional":
        clk = conditional_clock(rel, subset, path.times, path.n)
    else:
        raise ConfigError("clock must be 'sampled' or 'conditional'")
    return PairSum(path.times, r.sum(axis=1), db.sum(axis=1), clk)


def measured_coefficients(path: PathRecord, subset: Sequence[Edge]) -> dict:
    """Drift and correlation of the radii in ``subset`` measured along a path.

    The drift of |Z^j| is the time average of (d|Z^j| - dB^j)/dt; the
    correlation is the normalized realized covariation of the dB^j.
    """
    idx = [edge_index(e) for e in subset]
    rel = path.separations()[:, idx]
    r = np.abs(rel)
    dw = path.relative_noise()[:, idx]
    db = np.real(np.conj(rel[:-1]) / r[:-1] * dw)
    span = path.times[-1] - path.times[0]
    drift = (np.diff(r, axis=0) - db).sum(axis=0) / span
    cov = db.T @ db
    scale = np.sqrt(np.diag(cov))
    corr = cov / np.outer(scale, scale)
    return {"edges": [e.label() for e in subset], "drift": drift.tolist(),
            "correlation": corr.tolist()}


def _simulate(kind: str, z0, params: ModelParams, sim: SimConfig, gen, edge: Edge | None):
    if kind == "many_delta":
        return simulate_many_delta(z0, params, sim, gen)
    if kind == "one_delta":
        return simulate_one_delta(z0, params, edge, sim, gen)
    if kind == "brownian":
        return brownian_particles(z0, params, sim, gen)
    raise ConfigError("path kind must be 'many_delta', 'one_delta' or 'brownian'")


def _nsc_sample(index, seed, z0, params, sim, kind, edge, thresholds, j_level):
    path = _simulate(kind, z0, params, sim, mc.stream(seed, index), edge)
    low = nsc_scan(path, j_level, 0.0).min_sum
    return [float(low < t) for t in thresholds]


def nsc_violation_fractions(z0, params: ModelParams, sim: SimConfig, thresholds: Sequence[float],
                            paths: int, seed: int, kind: str = "many_delta",
                            edge: Edge | None = None, j_level: int = 2,
                            workers: int | None = None) -> list[mc.EstimatorResult]:
    """Fraction of paths whose j smallest radii ever sum below each threshold."""
    task = partial(_nsc_sample, z0=np.asarray(z0), params=params, sim=sim, kind=kind,
                   edge=edge, thresholds=tuple(thresholds), j_level=j_level)
    return mc.run_blocks(task, paths, seed, workers, width=len(thresholds)).result()


def _comparison_sample(index, seed, z0, params, sim, kind, edge, subset, dimension, k, m,
                       clock):
    path = _simulate(kind, z0, params, sim, mc.stream(seed, index), edge)
    ps = pair_sum_process(path, subset, clock)
    return lower_bessel_compare(ps.rho, ps.clock, dimension, k, m, ps.noise)


def bessel_comparison_study(z0, params: ModelParams, sim: SimConfig, subset: Sequence[Edge],
                            alpha: float, k: int, m: int, paths: int, seed: int,
                            kind: str = "brownian", edge: Edge | None = None,
                            clock: str = "sampled",
                            workers: int | None = None) -> list[ComparisonReport]:
    """Per-path Bessel comparison reports for the radius sum over ``subset``."""
    dim = dimension_d(len(subset), alpha)
    if not dim.admissible:
        raise ConfigError(f"dimension {dim.d} is below 2")
    task = partial(_comparison_sample, z0=np.asarray(z0), params=params, sim=sim, kind=kind,
                   edge=edge, subset=tuple(subset), dimension=dim.d, k=k, m=m, clock=clock)
    return mc.map_paths(task, paths, seed, workers)
