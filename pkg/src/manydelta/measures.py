"""Change-of-measure functionals along paths and the estimators built on them.

Along a recorded path the time integrals use the trapezoid rule and the
stochastic integrals use left endpoints (Ito).  Estimators that never
record a path use the left-endpoint running integrals accumulated by the
integrator instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable

import numpy as np
from scipy import special

from . import mc
from .localtime import KernelParams, kappa_eps, kernel_mass
from .model import (
    ConfigError, Configuration, Edge, ModelParams, SingularStateError, classify_state,
    edge_index, separations, sigma_matrix,
)
from .sde import (
    PathRecord, SimConfig, brownian_particles, simulate_many_delta, simulate_one_delta,
    simulate_radial_one_delta,
)


@dataclass
class WeightFunctional:
    a_tilde: float
    a_ring: float
    exp_functional: float
    n_ring: float
    n_tilde: float
    qv_n: float


def _k0(x):
    return special.k0e(x) * np.exp(-x)


def _log_k0(x):
    return np.log(special.k0e(x)) - x


def _trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def _scaled_k0(r: np.ndarray, params: ModelParams, weight: np.ndarray):
    """Per row: w_j K0(x_j) exp(shift) and the shift, over positively weighted edges."""
    x = np.sqrt(2.0 * params.beta) * r
    active = weight > 0.0
    if np.any(r[..., active] <= 0.0):
        raise SingularStateError("a positively weighted pair is at contact")
    xs = np.where(active, x, np.inf)
    shift = np.min(xs, axis=-1, keepdims=True)
    vals = np.where(active, weight * special.k0e(np.where(active, x, 1.0))
                    * np.exp(-(np.where(active, x, shift) - shift)), 0.0)
    return vals, shift


def _weight_rate(r: np.ndarray, params: ModelParams) -> np.ndarray:
    """Sum_j beta_j w_j K0^j / K0^w per row."""
    vals, _ = _scaled_k0(r, params, params.weight)
    return (vals @ params.beta) / vals.sum(axis=-1)


def _ref(params: ModelParams, i: Edge) -> int:
    k = edge_index(i)
    if params.weight[k] <= 0.0:
        raise ConfigError("the reference edge needs a positive weight")
    return k


def a_tilde(path: PathRecord, params: ModelParams, i: Edge) -> float:
    """Integral of sum_j beta_j w_j K0^j / K0^w minus beta_i t; exactly 0 when homogeneous."""
    k = _ref(params, i)
    if params.homogeneous:
        return 0.0
    r = np.abs(path.separations())
    rate = _weight_rate(r, params) - params.beta[k]
    return _trapezoid(rate, path.times)


def a_ring_rate(r: np.ndarray, params: ModelParams, k: int, eps: float) -> np.ndarray:
    """Integrand sum_{j != i} (w_j/w_i) K0^j kappa_eps(|Z^i|) per row of radii."""
    others = params.positive.copy()
    others[k] = False
    x = np.sqrt(2.0 * params.beta[others]) * r[..., others]
    k0_others = (params.weight[others] / params.weight[k] * _k0(x)).sum(axis=-1)
    return k0_others * kappa_eps(r[..., k], KernelParams(float(params.beta[k]), eps))


def a_ring(path: PathRecord, params: ModelParams, i: Edge, eps: float) -> float:
    """Local-time term through the kernel surrogate dL ~ kappa_eps ds / 2."""
    k = _ref(params, i)
    r = np.abs(path.separations())
    return _trapezoid(a_ring_rate(r, params, k, eps), path.times)


def log_ratio(config_or_positions, params: ModelParams, i: Edge,
              contact_radius: float = 0.0) -> float:
    """log(K0^w / (w_i K0^i)); 0 when the i pair is within ``contact_radius``."""
    pos = getattr(config_or_positions, "positions", config_or_positions)
    k = _ref(params, i)
    r = np.abs(separations(np.asarray(pos)))
    if r[k] <= contact_radius or r[k] == 0.0:
        others = params.positive.copy()
        others[k] = False
        if np.any(r[others] <= 0.0):
            raise SingularStateError("another positively weighted pair is at contact")
        return 0.0
    x = np.sqrt(2.0 * params.beta) * r
    pos_w = params.positive
    if np.any(r[pos_w] <= 0.0):
        raise SingularStateError("a positively weighted pair is at contact")
    logs = np.log(params.weight[pos_w]) + _log_k0(x[pos_w])
    ref = math.log(params.weight[k]) + float(_log_k0(x[k]))
    return float(np.log(np.sum(np.exp(logs - ref))))


def exp_functional_from_totals(z0, z_end, params: ModelParams, i: Edge, t_end: float,
                               weight_integral: float, a_ring_value: float,
                               contact_radius: float = 0.0) -> float:
    """Exponential functional from terminal state and accumulated integrals."""
    k = _ref(params, i)
    a_t = 0.0 if params.homogeneous else weight_integral - params.beta[k] * t_end
    return math.exp(log_ratio(z_end, params, i, contact_radius)
                    - log_ratio(z0, params, i, contact_radius) - a_t - a_ring_value)


def exp_functional(path: PathRecord, params: ModelParams, i: Edge, eps: float,
                   contact_radius: float = 0.0) -> float:
    """w_i K0^i(0)/K0^w(0) * exp(-A_tilde - A_ring) * K0^w(t)/(w_i K0^i(t))."""
    if len(path.times) < 2 or path.times[-1] == path.times[0]:
        return 1.0
    if not classify_state(path.terminal, params).eligible:
        raise SingularStateError("terminal state has several pairs at contact")
    lr = (log_ratio(path.states[-1], params, i, contact_radius)
          - log_ratio(path.states[0], params, i, contact_radius))
    return math.exp(lr - a_tilde(path, params, i) - a_ring(path, params, i, eps))


def radial_increments(path: PathRecord) -> np.ndarray:
    """dB^j per step and edge: relative noise projected on the left-point direction."""
    rel = path.separations()[:-1]
    dw = path.relative_noise()
    r = np.abs(rel)
    return np.real(np.conj(rel) / r * dw)


def _eval_points(values: np.ndarray, evaluation: str) -> np.ndarray:
    if evaluation == "left":
        return values[:-1]
    if evaluation == "midpoint":
        return 0.5 * (values[1:] + values[:-1])
    raise ValueError("evaluation must be 'left' or 'midpoint'")


def rn_terms(path: PathRecord, params: ModelParams, i: Edge, eps: float,
             evaluation: str = "left") -> WeightFunctional:
    """Finite-variation and martingale parts of the log-ratio along a path."""
    k = _ref(params, i)
    rel = path.separations()
    r = np.abs(rel)
    vals, _ = _scaled_k0(r, params, params.weight)
    total = vals.sum(axis=-1)
    x = np.sqrt(2.0 * params.beta) * r
    x_safe = np.where(params.positive, x, 1.0)
    khat1_over_k0 = x_safe * special.k1e(x_safe) / special.k0e(x_safe)
    frac = vals / total[:, None]
    ring_coef = khat1_over_k0[:, k] * (1.0 - frac[:, k]) / r[:, k]
    others = params.positive.copy()
    others[k] = False
    tilde_coef = -(frac * khat1_over_k0 / np.where(params.positive, r, 1.0))[:, others]
    db = radial_increments(path)
    dn_ring = _eval_points(ring_coef, evaluation) * db[:, k]
    dn_tilde = (_eval_points(tilde_coef, evaluation) * db[:, others]).sum(axis=-1)
    dn = dn_ring + dn_tilde
    a_t = a_tilde(path, params, i)
    a_r = a_ring(path, params, i, eps)
    lr = (log_ratio(path.states[-1], params, i) - log_ratio(path.states[0], params, i))
    return WeightFunctional(
        a_tilde=a_t, a_ring=a_r,
        exp_functional=math.exp(lr - a_t - a_r),
        n_ring=float(dn_ring.sum()), n_tilde=float(dn_tilde.sum()),
        qv_n=float(np.sum(dn * dn)),
    )


def rn_identity_residual(path: PathRecord, params: ModelParams, i: Edge, eps: float,
                         evaluation: str = "left") -> float:
    """|change of log-ratio - (A + N - <N,N>/2)| at the end of the path."""
    if len(path.times) < 2:
        return 0.0
    terms = rn_terms(path, params, i, eps, evaluation)
    lr = (log_ratio(path.states[-1], params, i) - log_ratio(path.states[0], params, i))
    rhs = terms.a_tilde + terms.a_ring + terms.n_ring + terms.n_tilde - 0.5 * terms.qv_n
    return abs(lr - rhs)


def _g0(u):
    return _k0(np.sqrt(u))


def _g1(u):
    s = np.sqrt(u)
    return s * special.k1e(s) * np.exp(-s)


def _ito_one_delta_terms(path: PathRecord, beta_i: float, k: int, eps_reg: float,
                         weight_i: float = 1.0):
    """F along the path and the five terms.

    Terms that come from quadratic variation (1, 3, 4) are summed against
    the sampled increments |dW^i|^2 and (dB^i)^2, whose conditional means
    are 2 ds and ds; the drift term 5 uses the trapezoid rule.
    """
    rel = path.separations()
    z = rel[:, k]
    big_r = np.abs(z) ** 2
    a = 2.0 * beta_i
    u = a * (eps_reg + big_r)
    h = weight_i * _g0(u)
    g1 = _g1(u)
    x = math.sqrt(2.0 * beta_i) * np.abs(z)
    ratio = x * special.k1e(x) / special.k0e(x)
    first = -weight_i * a * g1 / (2.0 * u) / h
    second = 0.5 * weight_i * a * a * (2.0 * g1 + u * _g0(u)) / (4.0 * u * u) * 4.0 * big_r / h
    square = -0.5 * (weight_i * a * g1 / (2.0 * u)) ** 2 * 4.0 * big_r / h ** 2
    if len(path.noise):
        dw = path.relative_noise()[:, k]
        db = radial_increments(path)[:, k]
    else:
        dw = np.zeros(len(path.times) - 1, dtype=complex)
        db = np.zeros(len(path.times) - 1)
    qv_b = db * db
    terms = {
        1: float(np.sum(first[:-1] * np.abs(dw) ** 2)),
        2: float(np.sum((first * 2.0 * np.abs(z))[:-1] * db)),
        3: float(np.sum(second[:-1] * qv_b)),
        4: float(np.sum(square[:-1] * qv_b)),
        5: _trapezoid(-first * 2.0 * ratio, path.times),
    }
    return np.log(h), terms


def ito_residual_one_delta(path: PathRecord, params: ModelParams, i: Edge,
                           eps_reg: float) -> float:
    """|F(R_t) - F(R_0) - sum of the five Ito terms| for F = log(w_i G0(2 beta_i (eps + R)))."""
    if len(path.times) < 2:
        return 0.0
    k = edge_index(i)
    f, terms = _ito_one_delta_terms(path, float(params.beta[k]), k, eps_reg,
                                    float(params.weight[k]) if params.weight[k] > 0 else 1.0)
    return abs(f[-1] - f[0] - sum(terms.values()))


def ito_terms_many(path: PathRecord, params: ModelParams, i: Edge, eps_reg,
                   weight: np.ndarray | None = None) -> tuple:
    """F = log sum_j w_j G0(2 beta_j (eps_j + R^j)) along the path and its nine Ito terms.

    Quadratic-variation terms (1, 3 to 7) use sampled increments, drift
    terms (8, 9) the trapezoid rule.  ``weight`` replaces the model weights
    in F, e.g. to keep only edge i.
    """
    w = params.weight if weight is None else np.asarray(weight, dtype=float)
    k = edge_index(i)
    if w[k] <= 0.0:
        raise ConfigError("edge i must carry a positive weight")
    m = len(params.beta)
    eps_vec = np.broadcast_to(np.asarray(eps_reg, dtype=float), (m,))
    rel = path.separations()
    r = np.abs(rel)
    big_r = r ** 2
    a = 2.0 * params.beta
    u = a * (eps_vec + big_r)
    g0 = _g0(u)
    g1 = _g1(u)
    h = (w * g0).sum(axis=-1)
    lead = w * a * g1 / (2.0 * u) / h[:, None]
    xi = math.sqrt(2.0 * params.beta[k]) * r[:, k]
    ratio = xi * special.k1e(xi) / special.k0e(xi)
    sig = sigma_matrix(params.n)
    cos_k = np.real(rel / rel[:, [k]])
    t = path.times
    pos = w > 0.0
    not_i = pos.copy()
    not_i[k] = False
    idx = np.flatnonzero(not_i)
    second = 0.5 * w * a * a * (2.0 * g1 + u * g0) / (4.0 * u * u) * 4.0 * big_r / h[:, None]
    square = -0.5 * lead ** 2 * 4.0 * big_r
    if len(path.noise):
        dw = path.relative_noise()
        db = radial_increments(path)
    else:
        dw = np.zeros((len(t) - 1, m), dtype=complex)
        db = np.zeros((len(t) - 1, m))
    left = lead[:-1]
    scaled = 2.0 * left * r[:-1] * db
    cross6 = 0.0
    for p in idx:
        for q in idx:
            if p != q:
                cross6 += float(np.sum(scaled[:, p] * scaled[:, q]))
    terms = {
        1: float(np.sum((-left * np.abs(dw) ** 2)[:, pos])),
        2: float(np.sum(-scaled[:, pos])),
        3: float(np.sum((second[:-1] * db * db)[:, pos])),
        4: float(np.sum((square[:-1] * db * db)[:, idx])),
        5: float(np.sum(square[:-1, k] * db[:, k] ** 2)),
        6: -0.5 * cross6,
        7: -float(np.sum(scaled[:, idx] * scaled[:, [k]])),
        8: _trapezoid((lead * sig[:, k] * cos_k * ratio[:, None])[:, not_i].sum(axis=-1), t),
        9: _trapezoid(2.0 * lead[:, k] * ratio, t),
    }
    return np.log(h), terms


def ito_residual_many(path: PathRecord, params: ModelParams, i: Edge, eps_reg,
                      weight: np.ndarray | None = None) -> float:
    """|F(t) - F(0) - sum of the nine Ito terms| under the one-delta law for edge i."""
    if len(path.times) < 2:
        return 0.0
    f, terms = ito_terms_many(path, params, i, eps_reg, weight)
    return abs(f[-1] - f[0] - sum(terms.values()))


# Estimators.  Each per-path task is a module-level function bound with
# functools.partial so that worker processes can receive it.

def _positions(z0) -> np.ndarray:
    return np.asarray(getattr(z0, "positions", z0), dtype=complex)


def _log_k0_sum(positions: np.ndarray, params: ModelParams) -> float:
    r = np.abs(separations(positions))
    vals, shift = _scaled_k0(r, params, params.weight)
    return float(math.log(vals.sum()) - shift[0])


def _bm_weighted_sample(index, seed, z0, params, sim, functional, stop_radius):
    path = brownian_particles(z0, params, sim, mc.stream(seed, index), record=False,
                              stop_radius=stop_radius)
    end = path.states[-1]
    if params.homogeneous:
        beta = float(params.beta[params.positive][0])
        log_w = -beta * path.times[-1]
    else:
        log_w = -path.functionals["weight_integral"]
    log_w += _log_k0_sum(end, params) - _log_k0_sum(z0, params)
    return functional(end) * math.exp(log_w)


def _direct_sample(index, seed, z0, params, sim, functional, stop_radius):
    path = simulate_many_delta(z0, params, sim, mc.stream(seed, index), record=False,
                               stop_radius=stop_radius)
    return functional(path.states[-1])


def _check_stop(z0, params, stop_radius):
    r = np.abs(separations(_positions(z0)))[params.positive]
    if not 0.0 < stop_radius < float(np.min(r)):
        raise ConfigError("stop radius must lie below every initial positively weighted radius")


def girsanov_bm_estimator(z0, params: ModelParams, functional: Callable, stop_radius: float,
                          t_cap: float, paths: int, seed: int, sim: SimConfig | None = None,
                          workers: int | None = None) -> mc.EstimatorResult:
    """Many-delta expectation of F at the stopped time, from weighted Brownian particles.

    Weight: exp(-int sum_j beta_j w_j K0^j / K0^w ds) K0^w(tau)/K0^w(0) with
    tau = t_cap or the first time a positively weighted radius reaches ``stop_radius``.
    """
    pos = _positions(z0)
    _check_stop(pos, params, stop_radius)
    sim = (sim or SimConfig()).replace(t_max=t_cap)
    if t_cap == 0.0:
        return mc.EstimatorResult(float(functional(pos)), 0.0, paths)
    task = partial(_bm_weighted_sample, z0=pos, params=params, sim=sim,
                   functional=functional, stop_radius=stop_radius)
    return mc.run_estimator(task, paths, workers, seed)


def direct_many_delta_estimator(z0, params: ModelParams, functional: Callable,
                                stop_radius: float, t_cap: float, paths: int, seed: int,
                                sim: SimConfig | None = None,
                                workers: int | None = None) -> mc.EstimatorResult:
    """Same expectation from paths of the many-delta motion itself."""
    pos = _positions(z0)
    _check_stop(pos, params, stop_radius)
    sim = (sim or SimConfig()).replace(t_max=t_cap)
    if t_cap == 0.0:
        return mc.EstimatorResult(float(functional(pos)), 0.0, paths)
    task = partial(_direct_sample, z0=pos, params=params, sim=sim,
                   functional=functional, stop_radius=stop_radius)
    return mc.run_estimator(task, paths, workers, seed)


def _mass_sample(index, seed, z0, params, sim):
    pos = z0
    r = np.abs(separations(pos))
    vals, _ = _scaled_k0(r, params, params.weight)
    share = vals / vals.sum()
    total = 0.0
    for k in np.flatnonzero(params.positive):
        if params.homogeneous:
            total += share[k]
            continue
        gen = np.random.Generator(mc.bit_generator(mc.StreamKey(seed, index, mc.Substream.NOISE),
                                                   int(k)))
        path = simulate_one_delta(pos, params, params.edges[k], sim, gen, record=False)
        a_t = path.functionals["weight_integral"] - params.beta[k] * path.times[-1]
        total += share[k] * math.exp(-a_t)
    return total


def weighted_average_mass(z0, params: ModelParams, sim: SimConfig, paths: int, seed: int,
                          workers: int | None = None) -> mc.EstimatorResult:
    """Total mass of the weighted average of one-delta laws stopped at the first contact.

    Sum over positively weighted i of w_i K0^i(0)/K0^w(0) E^i[exp(-A_tilde(T))],
    T the first contact of any positively weighted pair.
    """
    pos = _positions(z0)
    if classify_state(Configuration(pos), params).kind.value != "all_separated":
        raise ConfigError("initial configuration must have every weighted pair separated")
    sim = sim.replace(max_contacts=1)
    task = partial(_mass_sample, z0=pos, params=params, sim=sim)
    return mc.run_estimator(task, paths, workers, seed)


def _martingale_sample(index, seed, z0, params, k, sim, stop_radius, eps, ring_scale):
    edge = params.edges[k]
    path = simulate_one_delta(z0, params, edge, sim, mc.stream(seed, index), eps=eps,
                              record=False, stop_radius=stop_radius)
    return exp_functional_from_totals(
        z0, path.states[-1], params, edge, path.times[-1],
        path.functionals["weight_integral"], ring_scale * path.functionals["a_ring"],
        contact_radius=sim.radius_floor)


@dataclass
class MartingaleReport:
    stopped: mc.EstimatorResult
    unstopped: mc.EstimatorResult
    stopped_pass: bool = field(init=False)
    unstopped_pass: bool = field(init=False)

    def __post_init__(self):
        s, u = self.stopped, self.unstopped
        self.stopped_pass = abs(s.mean - 1.0) <= s.z * s.stderr or s.stderr == 0.0 and s.mean == 1.0
        self.unstopped_pass = u.mean <= 1.0 + u.z * u.stderr


def stopped_martingale_test(z0, params: ModelParams, i: Edge, t: float, stop_radius: float,
                            eps: float, paths: int, seed: int, sim: SimConfig | None = None,
                            workers: int | None = None,
                            normalize_kernel: bool = False) -> MartingaleReport:
    """Mean of the exponential functional at t stopped at the non-i stop radius, and unstopped.

    With ``normalize_kernel`` the local-time term is divided by half the
    kernel mass int kappa_eps m0, which tends to 2 only like 1/log(1/eps);
    the raw surrogate then no longer overcounts the local time at finite eps.
    """
    pos = _positions(z0)
    k = _ref(params, i)
    r = np.abs(separations(pos))
    others = params.positive.copy()
    others[k] = False
    if not 0.0 < stop_radius < float(np.min(r[others])):
        raise ConfigError("stop radius must lie below every other weighted initial radius")
    sim = (sim or SimConfig()).replace(t_max=t)
    if t == 0.0:
        one = mc.EstimatorResult(1.0, 0.0, paths)
        return MartingaleReport(one, one)
    scale = 1.0
    if normalize_kernel:
        scale = 2.0 / kernel_mass(KernelParams(float(params.beta[k]), eps))
    stopped = mc.run_estimator(partial(_martingale_sample, z0=pos, params=params, k=k, sim=sim,
                                       stop_radius=stop_radius, eps=eps, ring_scale=scale),
                               paths, workers, seed)
    free = mc.run_estimator(partial(_martingale_sample, z0=pos, params=params, k=k, sim=sim,
                                    stop_radius=0.0, eps=eps, ring_scale=scale),
                            paths, workers, seed + 1)
    return MartingaleReport(stopped, free)


def _local_time_sample(index, seed, r0, beta, sim, eps, q):
    path = simulate_radial_one_delta(r0, beta, sim, mc.stream(seed, index), eps=eps, q=q,
                                     record=False)
    return (0.5 * path.occupation, 0.5 * path.laplace_occupation)


def local_time_estimates(r0: float, beta: float, horizon: float, eps: float, q: float,
                         paths: int, seed: int, sim: SimConfig,
                         workers: int | None = None) -> tuple[mc.EstimatorResult, mc.EstimatorResult]:
    """Monte Carlo mean local time up to ``horizon`` and its q-Laplace transform.

    The local time is the kernel occupation: L ~ (1/2) int kappa_eps(r_s) ds.
    The Laplace transform is truncated at ``horizon``.
    """
    sim = sim.replace(t_max=horizon)
    task = partial(_local_time_sample, r0=r0, beta=beta, sim=sim, eps=eps, q=q)
    acc = mc.run_blocks(task, paths, seed, workers, width=2)
    mean_lt, laplace = acc.result()
    return mean_lt, laplace


@dataclass(frozen=True)
class ResidualLadder:
    """Median residuals on coupled grids dt (coarse) and dt/2 (fine)."""

    dt: float
    segments: int
    coarse: dict
    fine: dict

    def ratio(self, name: str) -> float:
        return self.fine[name] / self.coarse[name] if self.coarse[name] > 0.0 else 0.0

    def to_dict(self) -> dict:
        return {"dt": self.dt, "segments": self.segments, "coarse": self.coarse,
                "fine": self.fine,
                "ratio": {k: self.ratio(k) for k in sorted(self.coarse)}}


def coupled_residuals(z0, params: ModelParams, i: Edge, horizon: float, dt: float,
                      segments: int, seed: int, eps_reg: float, eps: float) -> ResidualLadder:
    """Ito and log-ratio residuals on one-delta segments at fixed steps dt and dt/2.

    The coarse noise is the sum of consecutive fine increments so both grids
    follow the same Brownian path.
    """
    pos = _positions(z0)
    steps = int(round(horizon / dt))
    if steps < 1:
        raise ConfigError("horizon must cover at least one step")
    names = ("ito_one_delta", "ito_many", "rn", "rn_midpoint")
    out = {"coarse": {k: [] for k in names}, "fine": {k: [] for k in names}}
    n = params.n
    for p in range(segments):
        gen = mc.stream(seed, p)
        half = 0.5 * dt
        fine = (gen.standard_normal((2 * steps, n))
                + 1j * gen.standard_normal((2 * steps, n))) * math.sqrt(half)
        coarse = fine[0::2] + fine[1::2]
        for level, step, nz in (("coarse", dt, coarse), ("fine", half, fine)):
            sim = SimConfig(dt_max=step, dt_min=step, t_max=horizon)
            path = simulate_one_delta(pos, params, i, sim, noise=nz, eps=eps)
            acc = out[level]
            acc["ito_one_delta"].append(ito_residual_one_delta(path, params, i, eps_reg))
            acc["ito_many"].append(ito_residual_many(path, params, i, eps_reg))
            acc["rn"].append(rn_identity_residual(path, params, i, eps))
            acc["rn_midpoint"].append(rn_identity_residual(path, params, i, eps, "midpoint"))
    med = {level: {k: float(np.median(v)) for k, v in acc.items()} for level, acc in out.items()}
    return ResidualLadder(dt, segments, med["coarse"], med["fine"])
