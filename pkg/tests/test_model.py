import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from manydelta import model
from manydelta.model import (
    ConfigError, Configuration, Edge, ModelParams, SingularStateError, StateKind,
)
from conftest import random_configuration


def brute_particle_drift(pos, params):
    n = len(pos)
    total = 0.0
    for e, b, w in zip(params.edges, params.beta, params.weight):
        r = abs(pos[e.upper - 1] - pos[e.lower - 1]) / math.sqrt(2)
        total += w * special.k0(math.sqrt(2 * b) * r)
    out = np.zeros(n, dtype=complex)
    for j in range(n):
        for k in range(n):
            if j == k:
                continue
            e = Edge(max(j, k) + 1, min(j, k) + 1)
            idx = model.edge_index(e)
            w, b = params.weight[idx], params.beta[idx]
            d = pos[j] - pos[k]
            out[j] -= w * math.sqrt(b) * special.k1(math.sqrt(b) * abs(d)) * d / (total * abs(d))
    return out


def brute_relative_drift(pos, params):
    rel = model.separations(pos)
    r = np.abs(rel)
    total = sum(w * special.k0(math.sqrt(2 * b) * rr)
                for w, b, rr in zip(params.weight, params.beta, r))
    out = np.zeros(len(rel), dtype=complex)
    for j, ej in enumerate(params.edges):
        for k, ek in enumerate(params.edges):
            x = math.sqrt(2 * params.beta[k]) * r[k]
            out[j] -= (model.sigma_dot(ej, ek) / 2 * params.weight[k] * x * special.k1(x) / total
                       * rel[k] / r[k] ** 2)
    return out


class TestEdges:
    def test_canonical_order_and_index(self):
        es = model.edges(4)
        assert es == (Edge(2, 1), Edge(3, 1), Edge(3, 2), Edge(4, 1), Edge(4, 2), Edge(4, 3))
        assert [model.edge_index(e) for e in es] == list(range(6))

    def test_parse_and_label_round_trip(self):
        assert Edge.parse("3-1") == Edge(3, 1)
        assert Edge(3, 1).label() == "3-1"
        with pytest.raises(ConfigError):
            Edge.parse("1-3")

    @pytest.mark.parametrize("a, b, expected", [
        (Edge(2, 1), Edge(2, 1), 2),
        (Edge(3, 1), Edge(2, 1), 1),
        (Edge(3, 2), Edge(2, 1), -1),
        (Edge(4, 3), Edge(2, 1), 0),
    ])
    def test_sigma_dot(self, a, b, expected):
        assert model.sigma_dot(a, b) == expected

    def test_sigma_dot_symmetric(self):
        es = model.edges(5)
        for a in es:
            for b in es:
                assert model.sigma_dot(a, b) == model.sigma_dot(b, a)


class TestParams:
    def test_needs_two_positive_weights(self):
        w = np.zeros(3)
        w[0] = 1.0
        with pytest.raises(ConfigError):
            ModelParams(3, np.ones(3), w)

    def test_rejects_bad_beta(self):
        with pytest.raises(ConfigError):
            ModelParams(3, [1.0, 0.0, 1.0], [1.0, 1.0, 1.0])

    def test_homogeneity_ignores_zero_weight_edges(self):
        p = ModelParams(3, [1.0, 1.0, 5.0], [1.0, 1.0, 0.0])
        assert p.homogeneous
        assert not ModelParams(3, [1.0, 1.2, 1.0], [1.0, 1.0, 1.0]).homogeneous

    def test_arrays_read_only(self):
        p = ModelParams.uniform(3)
        with pytest.raises(ValueError):
            p.beta[0] = 2.0

    def test_json_parse(self):
        doc = {"n": 3, "beta": {"2-1": 1.0, "3-1": 2.0, "3-2": 1.5}, "w": {"2-1": 1, "3-1": 2},
               "z0": [[0, 0], [1, 0], [0, 1]]}
        params, config = model.parse_model_json(doc)
        assert list(params.weight) == [1.0, 2.0, 0.0]
        assert list(params.beta) == [1.0, 2.0, 1.5]
        assert config.positions[2] == 1j

    @pytest.mark.parametrize("doc", [
        {"n": 3, "betta": {}, "z0": []},
        {"n": 3, "beta": {"2-1": 1.0}, "z0": [[0, 0], [1, 0], [0, 1]]},
        {"n": 3, "beta": {"2-1": 1, "3-1": 1, "3-2": 1}, "z0": [[0, 0]]},
    ])
    def test_json_errors(self, doc):
        with pytest.raises(ConfigError):
            model.parse_model_json(doc)


class TestFunctionals:
    def test_single_term_sum(self):
        p = ModelParams(3, [2.0, 1.0, 1.0], [1.0, 1e-300, 0.0])
        # |Z| = 1/sqrt(2 beta) on edge (2,1); the other weighted term is negligible
        z = 1.0 / math.sqrt(4.0) * math.sqrt(2)
        config = Configuration(np.array([0.0, z, 5.0 + 5.0j]))
        assert model.weighted_k0_sum(config, p) == pytest.approx(special.k0(1.0), rel=1e-12)

    def test_equilateral_sum(self):
        d = 0.8
        pos = d * np.exp(2j * np.pi * np.arange(3) / 3) / math.sqrt(3)
        val = model.weighted_k0_sum(Configuration(pos), ModelParams.uniform(3))
        assert val == pytest.approx(3 * special.k0(d), rel=1e-12)

    def test_sum_linear_in_weights(self, rng):
        pos = random_configuration(rng, 4)
        p = ModelParams.uniform(4)
        a = model.weighted_k0_sum(Configuration(pos), p)
        b = model.weighted_k0_sum(Configuration(pos), p.with_weights(2 * p.weight))
        assert b == pytest.approx(2 * a, rel=1e-13)

    def test_sum_rejects_weighted_coincidence(self):
        with pytest.raises(SingularStateError):
            model.weighted_k0_sum(Configuration(np.array([0, 0, 1.0])), ModelParams.uniform(3))

    def test_equilateral_drift_points_to_centroid(self):
        d, beta = 0.9, 1.3
        pos = d * np.exp(2j * np.pi * np.arange(3) / 3) / math.sqrt(3)
        b = model.drift_particles(Configuration(pos), ModelParams.uniform(3, beta))
        mag = 2 * math.sqrt(beta) * special.k1(math.sqrt(beta) * d) / (3 * special.k0(math.sqrt(beta) * d))
        # two equal pulls 60 degrees apart add up to sqrt(3) times one pull
        assert np.allclose(np.abs(b), mag * math.cos(math.pi / 6), rtol=1e-12)
        assert np.allclose(b / np.abs(b), -pos / np.abs(pos), atol=1e-12)

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_particle_drift_matches_brute_force(self, rng, n):
        m = n * (n - 1) // 2
        for _ in range(20):
            pos = random_configuration(rng, n)
            p = ModelParams(n, rng.uniform(0.5, 2.0, m), rng.uniform(0.0, 2.0, m))
            ref = brute_particle_drift(pos, p)
            got = model.drift_particles(Configuration(pos), p)
            assert np.allclose(got, ref, rtol=1e-11, atol=1e-13 * np.abs(ref).max())

    def test_relative_drift_matches_brute_force(self, rng):
        for _ in range(20):
            pos = random_configuration(rng, 3)
            p = ModelParams(3, rng.uniform(0.5, 2.0, 3), rng.uniform(0.1, 2.0, 3))
            ref = brute_relative_drift(pos, p)
            assert np.allclose(model.drift_relative(Configuration(pos), p), ref, rtol=1e-11)

    def test_relative_drift_is_image_of_particle_drift(self, rng):
        for _ in range(50):
            pos = random_configuration(rng, 5)
            p = ModelParams(5, rng.uniform(0.5, 2.0, 10), rng.uniform(0.0, 2.0, 10))
            b = model.drift_particles(Configuration(pos), p)
            up, lo = model.edge_endpoints(5)
            rel = model.drift_relative(Configuration(pos), p)
            assert np.max(np.abs((b[up] - b[lo]) / math.sqrt(2) - rel)) <= 1e-12 * max(1, np.abs(rel).max())

    def test_scale_invariance_in_weights(self, rng):
        pos = random_configuration(rng, 4)
        p = ModelParams.uniform(4)
        a = model.drift_particles(Configuration(pos), p)
        b = model.drift_particles(Configuration(pos), p.with_weights(7.5 * p.weight))
        assert np.allclose(a, b, rtol=1e-13)

    def test_single_weight_reduces_to_one_pair_drift(self):
        p = ModelParams(3, [1.4, 1.0, 1.0], [1.0, 1e-300, 0.0])
        pos = np.array([0.1 + 0.2j, 0.6 - 0.1j, 30.0 + 30.0j])
        b = model.drift_particles(Configuration(pos), p)
        d = pos[1] - pos[0]
        x = math.sqrt(1.4) * abs(d)
        one = -math.sqrt(1.4) * special.k1(x) / special.k0(x) * d / abs(d)
        assert b[1] == pytest.approx(one, rel=1e-12)
        assert b[0] == pytest.approx(-one, rel=1e-12)
        assert abs(b[2]) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 5), st.integers(0, 2 ** 32 - 1))
def test_drift_zero_sum(n, seed):
    g = np.random.default_rng(seed)
    m = n * (n - 1) // 2
    pos = random_configuration(g, n, spread=g.uniform(0.01, 5.0))
    p = ModelParams(n, g.uniform(0.1, 5.0, m), g.uniform(0.0, 3.0, m) + np.r_[1.0, 1.0, np.zeros(m - 2)])
    b = model.drift_particles(Configuration(pos), p)
    assert abs(b.sum()) <= 1e-12 * np.abs(b).max()


class TestPhi:
    def test_self_term(self):
        p = ModelParams.uniform(3)
        pos = np.array([0.0, 1.0, 0.4 + 2.0j])
        config = Configuration(pos)
        rel = config.separations()
        r = np.abs(rel)
        x = math.sqrt(2) * r
        total = special.k0(x).sum()
        # with every edge in the subset the edge-j self term is 2 khat1_j / total
        self_term = 2 * x[0] * special.k1(x[0]) / total
        full = model.phi_term(model.edges(3), Edge(2, 1), config, p)
        others = sum((r[0] / r[k]) * (rel[k] / rel[0]).real * model.sigma_dot(Edge(2, 1), e)
                     * x[0] * special.k1(x[0]) / total
                     for k, e in enumerate(model.edges(3)) if k != 0)
        assert full == pytest.approx(self_term + others, rel=1e-12)

    def test_bound_on_random_configurations(self, rng):
        violations = 0
        for _ in range(10_000):
            n = int(rng.integers(3, 6))
            m = n * (n - 1) // 2
            pos = random_configuration(rng, n)
            p = ModelParams(n, rng.uniform(0.2, 3.0, m), rng.uniform(0.1, 2.0, m))
            es = model.edges(n)
            size = int(rng.integers(1, m + 1))
            subset = [es[k] for k in rng.choice(m, size, replace=False)]
            j = subset[0]
            c = Configuration(pos)
            if abs(model.phi_term(subset, j, c, p)) > model.phi_bound(subset, j, c, p) * (1 + 1e-12):
                violations += 1
        assert violations == 0

    def test_random_n4_against_loop(self, rng):
        pos = random_configuration(rng, 4)
        p = ModelParams(4, rng.uniform(0.5, 2, 6), rng.uniform(0.1, 2, 6))
        es = model.edges(4)
        subset = [es[0], es[2], es[5]]
        rel = model.separations(pos)
        r = np.abs(rel)
        x = np.sqrt(2 * p.beta) * r
        total = np.sum(p.weight * special.k0(x))
        kh = p.weight * x * special.k1(x) / total
        ref = 0.0
        for k, e in enumerate(es):
            c = (rel[k] / rel[0]).real * model.sigma_dot(es[0], e)
            ref += (r[0] / r[k]) * c * kh[0] if e in subset else (r[0] / r[k]) ** 2 * c * kh[k]
        assert model.phi_term(subset, es[0], Configuration(pos), p) == pytest.approx(ref, rel=1e-12)


class TestClassify:
    def test_all_separated(self):
        c = model.classify_state(Configuration(np.array([0, 1, 1j])), ModelParams.uniform(3))
        assert c.kind is StateKind.ALL_SEPARATED and c.eligible

    def test_single_contact(self):
        c = model.classify_state(Configuration(np.array([0, 0, 1j])), ModelParams.uniform(3))
        assert c.kind is StateKind.SINGLE_CONTACT and c.edge == Edge(2, 1)

    def test_multi_contact(self):
        c = model.classify_state(Configuration(np.array([0, 0, 0])), ModelParams.uniform(3))
        assert c.kind is StateKind.MULTI_CONTACT and not c.eligible

    def test_zero_weight_contact_is_ignored(self):
        p = ModelParams(3, np.ones(3), [0.0, 1.0, 1.0])
        c = model.classify_state(Configuration(np.array([0, 0, 1j])), p)
        assert c.kind is StateKind.ALL_SEPARATED

    def test_tolerance(self):
        c = model.classify_state(Configuration(np.array([0, 1e-4, 1j])), ModelParams.uniform(3),
                                 contact_tol=1e-3)
        assert c.kind is StateKind.SINGLE_CONTACT
