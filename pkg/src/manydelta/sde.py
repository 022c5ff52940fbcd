"""Path generation for the one-delta and many-delta particle systems.

Integration is Euler-Maruyama with a step that shrinks with the smallest
watched pair radius, a drift evaluated at radii clamped below by the radius
floor, and a taming cap on the per-step drift displacement.  The hot loop
lives in the backend selected by ``_backend``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Iterator

import numpy as np

from . import _backend
from .model import (
    SQRT2, ConfigError, Configuration, Edge, ModelParams, classify_state,
    edge_endpoints, edge_index, edges, separations,
)
from .specfun import DomainError, ratio_khat1_k0

STATUS_NAMES = {0: "horizon", 1: "contact_budget", 2: "stopped", 3: "step_budget", 4: "blowup"}


class NumericalBlowupError(RuntimeError):
    """The integrator produced a non-finite state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class SimConfig:
    """Integrator settings.

    ``dt_scale`` is the squared radius at which the adaptive step reaches
    ``dt_max``; ``max_contacts = 0`` means no contact budget.
    """

    dt_max: float = 1e-3
    dt_min: float = 1e-8
    contact_threshold: float = 1e-3
    radius_floor: float = 1e-6
    taming_cap: float = 0.5
    t_max: float = 1.0
    max_contacts: int = 0
    dt_scale: float = 1.0
    max_steps: int = 50_000_000

    def __post_init__(self):
        if not 0.0 < self.dt_min <= self.dt_max:
            raise ConfigError("need 0 < dt_min <= dt_max")
        if not 0.0 < self.radius_floor < self.contact_threshold:
            raise ConfigError("need 0 < radius_floor < contact_threshold")
        if not 0.0 < self.taming_cap < 1.0:
            raise ConfigError("taming_cap must lie in (0, 1)")
        if not self.t_max >= 0.0:
            raise ConfigError("t_max must be nonnegative")
        if self.max_contacts < 0 or self.max_steps < 1:
            raise ConfigError("max_contacts must be >= 0 and max_steps >= 1")
        if not self.dt_scale > 0.0:
            raise ConfigError("dt_scale must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown sim keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "SimConfig":
        return SimConfig(**{**asdict(self), **changes})


@dataclass(frozen=True)
class ContactEvent:
    time: float
    edge: Edge
    pre_radius: float


@dataclass
class PathRecord:
    """One simulated path.

    ``states`` has one row of complex positions per grid time and ``noise``
    one row of complex Brownian increments per step.  ``drift`` holds the
    tamed drift actually applied on each step.  ``functionals`` carries the
    running integrals accumulated by the integrator at left endpoints.
    """

    times: np.ndarray
    states: np.ndarray
    noise: np.ndarray
    contacts: list[ContactEvent]
    absorbed: bool
    status: str
    drift: np.ndarray | None = None
    functionals: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def terminal(self) -> Configuration:
        return Configuration(self.states[-1])

    def separations(self) -> np.ndarray:
        """Relative motions per grid time, shape (len(times), n_edges)."""
        up, lo = edge_endpoints(self.n)
        return (self.states[:, up] - self.states[:, lo]) / SQRT2

    def relative_noise(self) -> np.ndarray:
        up, lo = edge_endpoints(self.n)
        return (self.noise[:, up] - self.noise[:, lo]) / SQRT2

    def to_json(self, stride: int = 0) -> dict:
        doc = {
            "t_end": float(self.times[-1]),
            "steps": int(len(self.times) - 1),
            "status": self.status,
            "absorbed": self.absorbed,
            "contacts": [[c.time, c.edge.label(), c.pre_radius] for c in self.contacts],
            "terminal": [[float(z.real), float(z.imag)] for z in self.states[-1]],
            "functionals": {k: float(v) for k, v in sorted(self.functionals.items())},
        }
        if stride > 0:
            idx = np.unique(np.r_[np.arange(0, len(self.times), stride), len(self.times) - 1])
            doc["times"] = self.times[idx].tolist()
            doc["states"] = [[[float(z.real), float(z.imag)] for z in row] for row in self.states[idx]]
        return doc


@dataclass
class RadialPath:
    times: np.ndarray
    radius: np.ndarray
    radial_noise: np.ndarray
    occupation: float
    laplace_occupation: float
    status: str


@dataclass
class BesselPath:
    times: np.ndarray
    radius: np.ndarray
    clamp_events: int


def as_bit_generator(rng_stream) -> np.random.BitGenerator:
    if isinstance(rng_stream, np.random.Generator):
        return rng_stream.bit_generator
    if isinstance(rng_stream, np.random.BitGenerator):
        return rng_stream
    raise TypeError("rng_stream must be a numpy Generator or BitGenerator")


def derive_relative_noise(increments, edge: Edge):
    """Relative increment (dW_upper - dW_lower)/sqrt(2) for ``edge``.

    ``increments`` holds complex particle increments along its last axis.
    """
    inc = np.asarray(increments)
    out = (inc[..., edge.upper - 1] - inc[..., edge.lower - 1]) / SQRT2
    return complex(out) if out.ndim == 0 else out


def radial_noise_increment(edge_state, relative_increment):
    """Projection Re(conj(Z)/|Z| dW) of a relative increment onto the radial direction."""
    z = np.asarray(edge_state, dtype=complex)
    r = np.abs(z)
    if np.any(r == 0.0):
        raise DomainError("radial projection needs a nonzero separation")
    out = (np.conj(z) / r * np.asarray(relative_increment)).real
    return float(out) if out.ndim == 0 else out


def adaptive_step(config: Configuration, params: ModelParams, sim: SimConfig) -> float:
    """Step size clamp(dt_max * min watched r^2 / dt_scale, dt_min, dt_max)."""
    r = np.maximum(np.abs(config.separations())[params.positive], sim.radius_floor)
    dt = sim.dt_max * float(np.min(r)) ** 2 / sim.dt_scale
    return min(max(dt, sim.dt_min), sim.dt_max)


def clamped_drift(positions: np.ndarray, params: ModelParams, drift_weight: np.ndarray,
                  radius_floor: float) -> np.ndarray:
    """Particle drift with every pair radius held at least at ``radius_floor``."""
    from scipy.special import k0e, k1e

    rel = separations(positions)
    r = np.abs(rel)
    active = drift_weight > 0.0
    rc = np.maximum(r, radius_floor)
    x = np.sqrt(2.0 * params.beta) * rc
    shift = np.min(x[active])
    damp = np.where(active, np.exp(-(x - shift)), 0.0)
    total = np.sum(np.where(active, drift_weight * k0e(x), 0.0) * damp)
    coef = np.where(active, drift_weight * np.sqrt(params.beta) * k1e(x), 0.0) * damp / total
    unit = np.where(r > 0.0, rel / np.where(r > 0.0, r, 1.0), 0.0)
    push = coef * unit
    up, lo = edge_endpoints(len(positions))
    out = np.zeros(len(positions), dtype=complex)
    np.subtract.at(out, up, push)
    np.add.at(out, lo, push)
    return out


def step_many_delta(config: Configuration, params: ModelParams, sim: SimConfig,
                    increments, dt: float | None = None) -> Configuration:
    """One tamed Euler-Maruyama step driven by the given complex increments.

    ``dt`` defaults to ``adaptive_step``; the increments must have been drawn
    for the same step length.
    """
    if dt is None:
        dt = adaptive_step(config, params, sim)
    pos = config.positions
    drift = clamped_drift(pos, params, params.weight, sim.radius_floor)
    r = np.abs(config.separations())
    nearest = max(float(np.min(r[params.positive])), sim.radius_floor)
    biggest = float(np.max(np.abs(drift)))
    cap = sim.taming_cap * nearest / dt if dt > 0.0 else math.inf
    if biggest > cap:
        drift = drift * (cap / biggest)
    new = pos + drift * dt + np.asarray(increments, dtype=complex)
    if not np.all(np.isfinite(new)):
        raise NumericalBlowupError("non-finite state after Euler step", state=new)
    return Configuration(new)


def _check_eligible(z0: Configuration, params: ModelParams):
    if z0.n != params.n:
        raise ConfigError(f"configuration has {z0.n} particles, model expects {params.n}")
    if not classify_state(z0, params).eligible:
        raise ConfigError("initial configuration has more than one positively weighted pair at contact")


def _run(z0: Configuration, params: ModelParams, sim: SimConfig, rng_stream, *,
         drift_weight: np.ndarray, active_edge: int, eps: float, stop_radius: float,
         stop_mask: np.ndarray | None, noise, record: bool, kernels=None) -> PathRecord:
    kern = kernels or _backend.kernels
    up, lo = edge_endpoints(params.n)
    pos = z0.positions
    if stop_mask is None:
        stop_mask = np.zeros(len(params.beta), dtype=np.uint8)
    bitgen = None if noise is not None else as_bit_generator(rng_stream)
    out = kern.integrate_particles(
        np.ascontiguousarray(pos.real), np.ascontiguousarray(pos.imag),
        up.astype(np.int64), lo.astype(np.int64),
        np.ascontiguousarray(params.beta, dtype=float),
        np.ascontiguousarray(drift_weight, dtype=float),
        np.ascontiguousarray(params.weight, dtype=float),
        np.ascontiguousarray(stop_mask, dtype=np.uint8),
        int(active_edge), float(eps),
        sim.dt_max, sim.dt_min, sim.dt_scale, sim.radius_floor, sim.contact_threshold,
        sim.taming_cap, sim.t_max, sim.max_contacts, float(stop_radius), sim.max_steps,
        bitgen, None if noise is None else np.asarray(noise, dtype=complex), bool(record),
    )
    status = STATUS_NAMES[out["status"]]
    if status == "blowup":
        raise NumericalBlowupError("non-finite state during integration",
                                   state=out["x"] + 1j * out["y"])
    es = edges(params.n)
    contacts = [ContactEvent(t, es[e], r) for t, e, r in out["contacts"]]
    terminal = out["x"] + 1j * out["y"]
    if record:
        states = out["states"][:, 0::2] + 1j * out["states"][:, 1::2]
        inc = out["noise"][:, 0::2] + 1j * out["noise"][:, 1::2]
        drift = out["drift"][:, 0::2] + 1j * out["drift"][:, 1::2]
        times = out["times"]
    else:
        states = np.vstack([pos, terminal])
        inc = np.zeros((0, params.n), dtype=complex)
        drift = None
        times = np.array([0.0, out["t"]])
    return PathRecord(
        times=times, states=states, noise=inc, contacts=contacts,
        absorbed=status == "step_budget", status=status, drift=drift,
        functionals={
            "t_end": out["t"],
            "steps": out["steps"],
            "weight_integral": out["acc_weight"],
            "a_ring": out["acc_aring"],
            "occupation": out["acc_occ"],
        },
    )


def simulate_many_delta(z0, params: ModelParams, sim: SimConfig, rng_stream=None, *,
                        record: bool = True, noise=None, stop_radius: float = 0.0,
                        stop_edges: Iterable[Edge] | None = None,
                        kernels=None) -> PathRecord:
    """Path of the many-delta motion until ``t_max``, the contact budget or a stop.

    With ``stop_radius > 0`` the path halts when any edge in ``stop_edges``
    (default: every positively weighted edge) first falls to that radius.
    """
    z0 = z0 if isinstance(z0, Configuration) else Configuration(z0)
    _check_eligible(z0, params)
    mask = _stop_mask(params, stop_edges)
    return _run(z0, params, sim, rng_stream, drift_weight=params.weight, active_edge=-1,
                eps=0.0, stop_radius=stop_radius, stop_mask=mask, noise=noise,
                record=record, kernels=kernels)


def simulate_one_delta(z0, params: ModelParams, active_edge: Edge, sim: SimConfig,
                       rng_stream=None, *, eps: float = 0.0, record: bool = True,
                       noise=None, stop_radius: float = 0.0,
                       stop_edges: Iterable[Edge] | None = None,
                       kernels=None) -> PathRecord:
    """Path of the one-delta motion where only ``active_edge`` carries a drift.

    Contacts, stops and running integrals still refer to the weights of
    ``params``.  With ``eps > 0`` the kernel occupation of the active pair and
    the local-time surrogate are accumulated.
    """
    z0 = z0 if isinstance(z0, Configuration) else Configuration(z0)
    _check_eligible(z0, params)
    k = edge_index(active_edge)
    if params.weight[k] <= 0.0:
        raise ConfigError("the active edge must carry a positive weight")
    drift_weight = np.zeros_like(params.weight)
    drift_weight[k] = 1.0
    if stop_edges is None and stop_radius > 0.0:
        stop_edges = [e for e, w in zip(params.edges, params.weight) if w > 0.0 and e != active_edge]
    mask = _stop_mask(params, stop_edges)
    return _run(z0, params, sim, rng_stream, drift_weight=drift_weight, active_edge=k,
                eps=eps, stop_radius=stop_radius, stop_mask=mask, noise=noise,
                record=record, kernels=kernels)


def brownian_particles(z0, params: ModelParams, sim: SimConfig, rng_stream=None, *,
                       record: bool = True, stop_radius: float = 0.0,
                       stop_edges: Iterable[Edge] | None = None, kernels=None) -> PathRecord:
    """Independent planar Brownian particles on the same grid and stopping rules."""
    z0 = z0 if isinstance(z0, Configuration) else Configuration(z0)
    mask = _stop_mask(params, stop_edges)
    return _run(z0, params, sim, rng_stream, drift_weight=np.zeros_like(params.weight),
                active_edge=-1, eps=0.0, stop_radius=stop_radius, stop_mask=mask,
                noise=None, record=record, kernels=kernels)


def _stop_mask(params: ModelParams, stop_edges) -> np.ndarray:
    if stop_edges is None:
        return params.positive.astype(np.uint8)
    mask = np.zeros(len(params.beta), dtype=np.uint8)
    for e in stop_edges:
        mask[edge_index(e)] = 1
    return mask


def radial_drift(r, beta: float):
    """Drift 1/(2r) - khat1(sqrt(2 beta) r)/(r K0(sqrt(2 beta) r)) of the one-delta radius."""
    r = np.asarray(r, dtype=float)
    out = 1.0 / (2.0 * r) - ratio_khat1_k0(math.sqrt(2.0 * beta) * r) / r
    return float(out) if out.ndim == 0 else out


def simulate_radial_one_delta(r0: float, beta: float, sim: SimConfig, rng_stream, *,
                              eps: float = 0.0, q: float = 0.0, record: bool = True,
                              kernels=None) -> RadialPath:
    """Radius of the one-delta relative motion.

    The planar relative motion is integrated and its modulus returned: the
    planar scheme keeps the radius nonnegative by construction and resolves
    the neighbourhood of the origin far better than a one-dimensional Euler
    scheme for the radial SDE with reflection.  ``eps > 0`` accumulates the
    kernel occupation and its exp(-q s) discounted form.
    """
    if not r0 >= 0.0 or not beta > 0.0:
        raise ConfigError("need r0 >= 0 and beta > 0")
    kern = kernels or _backend.kernels
    out = kern.integrate_relative(
        float(r0), 0.0, float(beta), sim.dt_max, sim.dt_min, sim.dt_scale,
        sim.radius_floor, sim.taming_cap, sim.t_max, float(eps), float(q),
        sim.max_steps, as_bit_generator(rng_stream), bool(record))
    status = STATUS_NAMES[out["status"]]
    if status == "blowup":
        raise NumericalBlowupError("non-finite radial state")
    if record:
        times, radius, dbs = out["times"], out["radius"], out["radial_noise"]
    else:
        times = np.array([0.0, out["t"]])
        radius = np.array([r0, math.hypot(out["x"], out["y"])])
        dbs = np.zeros(0)
    return RadialPath(times, radius, dbs, out["acc_occ"], out["acc_lap"], status)


def simulate_bessel(dimension: float, r_start: float, t_start: float, sim: SimConfig,
                    rng_stream=None, shared_noise=None, dts=None, kernels=None) -> BesselPath:
    """Euler path of the Bessel process dr = (dimension-1)/(2r) dt + dB.

    ``shared_noise`` supplies the increments dB (with step sizes ``dts``,
    default ``dt_max``); otherwise increments are drawn on a uniform grid
    from ``t_start`` to ``t_max``.  Downward crossings of the radius floor are
    clamped and counted.
    """
    if not dimension >= 2.0:
        raise ConfigError("Bessel dimension must be at least 2")
    kern = kernels or _backend.kernels
    if shared_noise is None:
        span = max(sim.t_max - t_start, 0.0)
        steps = int(math.ceil(span / sim.dt_max - 1e-12))
        dts = np.full(steps, span / steps) if steps else np.zeros(0)
        gen = np.random.Generator(as_bit_generator(rng_stream))
        dbs = gen.standard_normal(steps) * np.sqrt(dts)
    else:
        dbs = np.ascontiguousarray(shared_noise, dtype=float)
        dts = (np.full(len(dbs), sim.dt_max) if dts is None
               else np.ascontiguousarray(dts, dtype=float))
        if len(dts) != len(dbs):
            raise ConfigError("step sizes and noise increments differ in length")
    radius, clamps = kern.integrate_bessel(float(dimension), float(r_start),
                                           np.ascontiguousarray(dts, dtype=float),
                                           np.ascontiguousarray(dbs, dtype=float),
                                           sim.radius_floor)
    times = t_start + np.r_[0.0, np.cumsum(dts)]
    return BesselPath(times, np.asarray(radius), int(clamps))


def write_paths_jsonl(records: Iterable[PathRecord], path, stride: int = 0,
                      start_index: int = 0) -> int:
    """Write one JSON line per path to a file name or text stream; returns the line count."""
    if hasattr(path, "write"):
        return _write_lines(records, path, stride, start_index)
    with open(path, "w", encoding="utf-8") as fh:
        return _write_lines(records, fh, stride, start_index)


def _write_lines(records, fh, stride, start_index) -> int:
    count = 0
    for k, rec in enumerate(records):
        doc = {"index": start_index + k, **rec.to_json(stride)}
        fh.write(json.dumps(doc, sort_keys=True) + "\n")
        count += 1
    return count


def read_paths_jsonl(path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)
