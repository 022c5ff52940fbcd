"""Particles, pair edges, parameters and the deterministic functionals of a configuration."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, NamedTuple

import numpy as np
from scipy import special

SQRT2 = math.sqrt(2.0)
COINCIDENCE_FLOOR = 1e-300


class ConfigError(ValueError):
    """Invalid model parameters or configuration input."""


class SingularStateError(ValueError):
    """A positively weighted pair sits exactly at contact where a value diverges."""


class Edge(NamedTuple):
    """Interaction pair (upper, lower) with 1 <= lower < upper <= n."""

    upper: int
    lower: int

    def label(self) -> str:
        return f"{self.upper}-{self.lower}"

    @classmethod
    def parse(cls, text: str) -> "Edge":
        try:
            a, b = (int(part) for part in text.split("-"))
        except ValueError as exc:
            raise ConfigError(f"edge key must look like \"2-1\", got {text!r}") from exc
        if not 1 <= b < a:
            raise ConfigError(f"edge key {text!r} needs upper > lower >= 1")
        return cls(a, b)


@lru_cache(maxsize=None)
def edges(n: int) -> tuple[Edge, ...]:
    """All pairs of an n-particle system in canonical (upper, lower) order."""
    return tuple(Edge(u, l) for u in range(2, n + 1) for l in range(1, u))


def edge_index(edge: Edge) -> int:
    """Position of ``edge`` in the canonical order."""
    u, l = edge
    return (u - 1) * (u - 2) // 2 + (l - 1)


@lru_cache(maxsize=None)
def edge_endpoints(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Zero-based particle indices (upper, lower) per canonical edge."""
    es = edges(n)
    return (np.array([e.upper - 1 for e in es], dtype=np.intp),
            np.array([e.lower - 1 for e in es], dtype=np.intp))


def sigma_dot(a: Edge, b: Edge) -> int:
    """Dot product of the signed incidence vectors e_upper - e_lower."""
    total = 0
    for pa, sa in ((a.upper, 1), (a.lower, -1)):
        for pb, sb in ((b.upper, 1), (b.lower, -1)):
            if pa == pb:
                total += sa * sb
    return total


@lru_cache(maxsize=None)
def sigma_matrix(n: int) -> np.ndarray:
    es = edges(n)
    mat = np.array([[sigma_dot(a, b) for b in es] for a in es], dtype=float)
    mat.setflags(write=False)
    return mat


@dataclass(frozen=True)
class ModelParams:
    """Particle count with per-edge couplings beta > 0 and weights w >= 0."""

    n: int
    beta: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError(f"particle count must be an integer >= 3, got {self.n!r}")
        m = self.n * (self.n - 1) // 2
        beta = np.array(self.beta, dtype=float).reshape(-1)
        weight = np.array(self.weight, dtype=float).reshape(-1)
        if beta.size != m or weight.size != m:
            raise ConfigError(f"expected {m} per-edge entries for n={self.n}")
        if not np.all(np.isfinite(beta)) or np.any(beta <= 0.0):
            raise ConfigError("every coupling beta must be positive and finite")
        if not np.all(np.isfinite(weight)) or np.any(weight < 0.0):
            raise ConfigError("every weight must be nonnegative and finite")
        if np.count_nonzero(weight > 0.0) < 2:
            raise ConfigError("at least two edges need a positive weight")
        beta.setflags(write=False)
        weight.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "weight", weight)

    @classmethod
    def uniform(cls, n: int, beta: float = 1.0, weight: float = 1.0) -> "ModelParams":
        m = n * (n - 1) // 2
        return cls(n, np.full(m, beta), np.full(m, weight))

    @property
    def edges(self) -> tuple[Edge, ...]:
        return edges(self.n)

    @property
    def positive(self) -> np.ndarray:
        return self.weight > 0.0

    @property
    def homogeneous(self) -> bool:
        b = self.beta[self.positive]
        return bool(np.all(b == b[0]))

    def with_weights(self, weight) -> "ModelParams":
        return ModelParams(self.n, self.beta, weight)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "beta": {e.label(): float(b) for e, b in zip(self.edges, self.beta)},
            "w": {e.label(): float(w) for e, w in zip(self.edges, self.weight) if w > 0.0},
        }


@dataclass(frozen=True)
class Configuration:
    """Complex planar positions of the n particles."""

    positions: np.ndarray = field(repr=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(pos)):
            raise ConfigError("positions must be finite")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.positions.size

    def separations(self) -> np.ndarray:
        """Relative motions (z_upper - z_lower)/sqrt(2) in canonical edge order."""
        return separations(self.positions)


def separations(positions: np.ndarray) -> np.ndarray:
    up, lo = edge_endpoints(len(positions))
    return (positions[up] - positions[lo]) / SQRT2


def parse_model_json(doc: dict) -> tuple[ModelParams, Configuration]:
    """Build parameters and initial configuration from the JSON config block."""
    allowed = {"n", "beta", "w", "z0"}
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown model keys: {sorted(unknown)}")
    for key in ("n", "beta", "z0"):
        if key not in doc:
            raise ConfigError(f"missing model key {key!r}")
    n = doc["n"]
    if not isinstance(n, int) or n < 3:
        raise ConfigError(f"n must be an integer >= 3, got {n!r}")
    es = edges(n)
    index = {e: k for k, e in enumerate(es)}

    def per_edge(block: dict, name: str, default: float | None) -> np.ndarray:
        if not isinstance(block, dict):
            raise ConfigError(f"{name} must map edge keys to numbers")
        out = np.full(len(es), np.nan if default is None else default)
        for key, val in block.items():
            e = Edge.parse(key)
            if e not in index:
                raise ConfigError(f"{name} key {key!r} is not an edge for n={n}")
            if not isinstance(val, (int, float)) or isinstance(val, bool):
                raise ConfigError(f"{name}[{key!r}] must be a number")
            out[index[e]] = float(val)
        if np.any(np.isnan(out)):
            missing = [e.label() for e, v in zip(es, out) if np.isnan(v)]
            raise ConfigError(f"{name} missing entries for edges {missing}")
        return out

    beta = per_edge(doc["beta"], "beta", None)
    weight = per_edge(doc.get("w", {}), "w", 0.0)
    z0 = doc["z0"]
    if not isinstance(z0, list) or len(z0) != n:
        raise ConfigError(f"z0 must list {n} [re, im] pairs")
    pos = []
    for item in z0:
        if not (isinstance(item, list) and len(item) == 2):
            raise ConfigError("each z0 entry must be [re, im]")
        pos.append(complex(float(item[0]), float(item[1])))
    return ModelParams(n, beta, weight), Configuration(np.array(pos))


def _kernel_terms(rel: np.ndarray, params: ModelParams, weight: np.ndarray):
    """Scaled K0 and K1 factors per edge sharing a common exponential offset."""
    r = np.abs(rel)
    x = np.sqrt(2.0 * params.beta) * r
    active = weight > 0.0
    if np.any(active & (r <= COINCIDENCE_FLOOR)):
        raise SingularStateError("a positively weighted pair is at contact")
    x_safe = np.where(active, x, 1.0)
    shift = np.min(x_safe[active])
    damp = np.where(active, np.exp(-(x_safe - shift)), 0.0)
    k0s = np.where(active, special.k0e(x_safe), 0.0) * damp
    k1s = np.where(active, special.k1e(x_safe), 0.0) * damp
    return r, x_safe, k0s, k1s, shift


def weighted_k0_sum(config: Configuration, params: ModelParams) -> float:
    """Sum over edges of w_j K0(sqrt(2 beta_j) |Z^j|)."""
    rel = config.separations()
    _, _, k0s, _, shift = _kernel_terms(rel, params, params.weight)
    return float(np.dot(params.weight, k0s) * math.exp(-shift))


def log_weighted_k0_sum(config: Configuration, params: ModelParams) -> float:
    rel = config.separations()
    _, _, k0s, _, shift = _kernel_terms(rel, params, params.weight)
    return float(math.log(np.dot(params.weight, k0s)) - shift)


def drift_particles(config: Configuration, params: ModelParams) -> np.ndarray:
    """Drift of each particle: minus the gradient of log of the weighted K0 sum."""
    pos = config.positions
    rel = separations(pos)
    r, _, k0s, k1s, _ = _kernel_terms(rel, params, params.weight)
    total = np.dot(params.weight, k0s)
    coef = params.weight * np.sqrt(params.beta) * k1s / total
    unit = np.where(r > 0.0, rel / np.where(r > 0.0, r, 1.0), 0.0)
    push = coef * unit
    up, lo = edge_endpoints(config.n)
    out = np.zeros(config.n, dtype=complex)
    np.subtract.at(out, up, push)
    np.add.at(out, lo, push)
    return out


def drift_relative(config: Configuration, params: ModelParams) -> np.ndarray:
    """Drift of every relative motion Z^j, written with khat(1, .) and 1/conj(Z^k)."""
    rel = config.separations()
    r, x, k0s, k1s, _ = _kernel_terms(rel, params, params.weight)
    total = np.dot(params.weight, k0s)
    khat1 = params.weight * x * k1s / total
    inv_conj = np.where(r > 0.0, rel / np.where(r > 0.0, r, 1.0) ** 2, 0.0)
    return -(sigma_matrix(config.n) / 2.0) @ (khat1 * inv_conj)


def phi_term(subset: Iterable[Edge], edge_j: Edge, config: Configuration,
             params: ModelParams) -> float:
    """Correction term for the drift of |Z^j| inside a sum of radii over ``subset``."""
    members = {edge_index(e) for e in subset}
    j = edge_index(edge_j)
    if j not in members:
        raise ConfigError("edge_j must belong to the subset")
    rel = config.separations()
    if np.any(np.abs(rel) <= COINCIDENCE_FLOOR):
        raise SingularStateError("phi term needs every separation nonzero")
    r, x, k0s, k1s, _ = _kernel_terms(rel, params, params.weight)
    total = np.dot(params.weight, k0s)
    khat1 = params.weight * x * k1s / total
    sig = sigma_matrix(config.n)
    value = 0.0
    for k in range(len(rel)):
        cos_term = (rel[k] / rel[j]).real
        if k in members:
            value += (r[j] / r[k]) * cos_term * sig[j, k] * khat1[j]
        else:
            value += (r[j] / r[k]) ** 2 * cos_term * sig[j, k] * khat1[k]
    return float(value)


def phi_bound(subset: Iterable[Edge], edge_j: Edge, config: Configuration,
              params: ModelParams) -> float:
    """Upper bound on |phi_term| obtained from |sigma . sigma| <= 2."""
    members = {edge_index(e) for e in subset}
    j = edge_index(edge_j)
    rel = config.separations()
    r, x, k0s, k1s, _ = _kernel_terms(rel, params, params.weight)
    total = np.dot(params.weight, k0s)
    khat1 = params.weight * x * k1s / total
    outside = [k for k in range(len(rel)) if k not in members]
    tail = sum(khat1[k] / r[k] for k in outside)
    return float(2 * len(members) * khat1[j] + 2 * tail * r[j])


class StateKind(enum.Enum):
    ALL_SEPARATED = "all_separated"
    SINGLE_CONTACT = "single_contact"
    MULTI_CONTACT = "multi_contact"


@dataclass(frozen=True)
class StateClass:
    kind: StateKind
    edge: Edge | None = None

    @property
    def eligible(self) -> bool:
        return self.kind is not StateKind.MULTI_CONTACT


def classify_state(config: Configuration, params: ModelParams,
                   contact_tol: float = 0.0) -> StateClass:
    """Classify by how many positively weighted pairs are within ``contact_tol``."""
    r = np.abs(config.separations())
    touching = np.flatnonzero(params.positive & (r <= contact_tol))
    if touching.size == 0:
        return StateClass(StateKind.ALL_SEPARATED)
    if touching.size == 1:
        return StateClass(StateKind.SINGLE_CONTACT, params.edges[touching[0]])
    return StateClass(StateKind.MULTI_CONTACT)
