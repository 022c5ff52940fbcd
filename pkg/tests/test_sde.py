import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from manydelta import mc, model, sde
from manydelta.model import ConfigError, Configuration, Edge, ModelParams
from manydelta.sde import SimConfig

Z0 = np.array([0.0, 0.7, 0.35 + 0.6j])


def uniform3():
    return ModelParams.uniform(3)


def rearmed_contacts(sep, threshold):
    """Downward crossings of ``threshold`` with re-arming above twice the threshold."""
    r = np.abs(sep)
    found = []
    for e in range(r.shape[1]):
        armed = r[0, e] > threshold
        for k in range(1, r.shape[0]):
            if armed and r[k, e] <= threshold:
                found.append((k, e))
                armed = False
            elif not armed and r[k, e] > 2 * threshold:
                armed = True
    return sorted(found)


class TestSimConfig:
    @pytest.mark.parametrize("changes", [
        {"dt_min": 0.0}, {"dt_min": 1e-2, "dt_max": 1e-3},
        {"radius_floor": 1e-2, "contact_threshold": 1e-3}, {"taming_cap": 1.0},
        {"t_max": -1.0}, {"max_contacts": -1}, {"dt_scale": 0.0},
    ])
    def test_rejects_bad_values(self, changes):
        with pytest.raises(ConfigError):
            SimConfig(**changes)

    def test_round_trip_and_unknown_keys(self):
        sim = SimConfig(dt_max=1e-4, t_max=2.0)
        assert SimConfig.from_dict(sim.to_dict()) == sim
        with pytest.raises(ConfigError):
            SimConfig.from_dict({"dt": 1e-3})


class TestNoise:
    def test_relative_noise_covariance(self):
        sim = SimConfig(dt_max=1e-2, t_max=200.0)
        path = sde.brownian_particles(Z0, uniform3(), sim, mc.stream(1, 0))
        dt = np.diff(path.times)
        rel = path.relative_noise() / np.sqrt(dt)[:, None]
        re = rel.real
        assert np.var(re, axis=0) == pytest.approx([1.0, 1.0, 1.0], abs=0.05)
        assert np.var(rel.imag, axis=0) == pytest.approx([1.0, 1.0, 1.0], abs=0.05)
        c = np.corrcoef(re.T)
        # (2,1),(3,1) share vertex 1 with the same sign; (2,1),(3,2) share 2 with opposite signs
        assert c[0, 1] == pytest.approx(0.5, abs=0.04)
        assert c[1, 2] == pytest.approx(0.5, abs=0.04)
        assert c[0, 2] == pytest.approx(-0.5, abs=0.04)
        assert np.mean(rel.real * rel.imag) == pytest.approx(0.0, abs=0.03)

    def test_derive_relative_noise_matches_record(self):
        sim = SimConfig(dt_max=1e-2, t_max=0.2)
        path = sde.brownian_particles(Z0, uniform3(), sim, mc.stream(2, 0))
        for k, e in enumerate(model.edges(3)):
            np.testing.assert_allclose(sde.derive_relative_noise(path.noise, e),
                                       path.relative_noise()[:, k], rtol=0, atol=1e-15)

    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
    def test_radial_projection(self, zr, zi, wr, wi):
        z = complex(zr, zi)
        if abs(z) < 1e-6:
            return
        w = complex(wr, wi)
        proj = sde.radial_noise_increment(z, w)
        assert abs(proj) <= abs(w) + 1e-12
        assert sde.radial_noise_increment(z, 2.5 * z / abs(z)) == pytest.approx(2.5)
        assert sde.radial_noise_increment(z, 1j * z) == pytest.approx(0.0, abs=1e-12)

    def test_radial_projection_at_origin(self):
        with pytest.raises(sde.DomainError):
            sde.radial_noise_increment(0.0, 1.0)


class TestStep:
    def test_adaptive_step_clamps(self):
        params = uniform3()
        sim = SimConfig(dt_max=1e-3, dt_min=1e-9, dt_scale=1.0)
        assert sde.adaptive_step(Configuration(4 * Z0), params, sim) == 1e-3
        close = Configuration(np.array([0.0, 0.01, 3.0]))
        r = 0.01 / math.sqrt(2)
        assert sde.adaptive_step(close, params, sim) == pytest.approx(1e-3 * r * r)
        touching = Configuration(np.array([0.0, 1e-9, 3.0]))
        assert sde.adaptive_step(touching, params, sim) == 1e-9

    def test_untamed_step_is_euler(self):
        params = uniform3()
        sim = SimConfig()
        cfg = Configuration(Z0)
        inc = np.array([1e-3, -2e-3j, 5e-4 + 5e-4j])
        new = sde.step_many_delta(cfg, params, sim, inc, dt=1e-4)
        expected = Z0 + model.drift_particles(cfg, params) * 1e-4 + inc
        np.testing.assert_allclose(new.positions, expected, rtol=1e-12)

    def test_taming_caps_displacement(self):
        params = uniform3()
        sim = SimConfig(taming_cap=0.5)
        cfg = Configuration(np.array([0.0, 1e-3, 3.0]))
        dt = 1e-2
        new = sde.step_many_delta(cfg, params, sim, np.zeros(3), dt=dt)
        nearest = 1e-3 / math.sqrt(2)
        assert np.max(np.abs(new.positions - cfg.positions)) == pytest.approx(0.5 * nearest)

    def test_clamped_drift_matches_model_away_from_floor(self, rng):
        params = ModelParams(3, beta=np.array([0.5, 1.0, 2.0]), weight=np.array([1.0, 0.3, 2.0]))
        pos = rng.normal(size=3) + 1j * rng.normal(size=3)
        got = sde.clamped_drift(pos, params, params.weight, 1e-9)
        np.testing.assert_allclose(got, model.drift_particles(Configuration(pos), params),
                                   rtol=1e-10)


class TestPaths:
    def test_bookkeeping_closes(self):
        sim = SimConfig(dt_max=1e-3, t_max=0.3)
        path = sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(3, 0))
        dt = np.diff(path.times)[:, None]
        np.testing.assert_allclose(np.diff(path.states, axis=0), path.drift * dt + path.noise,
                                   rtol=0, atol=1e-13)
        assert path.times[-1] == pytest.approx(0.3)
        assert path.status == "horizon"

    def test_centre_of_mass_is_brownian(self):
        sim = SimConfig(dt_max=1e-3, t_max=0.3)
        path = sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(4, 0))
        com = path.states.sum(axis=1)
        np.testing.assert_allclose(com - com[0], np.r_[0.0, np.cumsum(path.noise.sum(axis=1))],
                                   atol=1e-12)

    def test_one_delta_bystander_is_brownian(self):
        sim = SimConfig(dt_max=1e-3, t_max=0.3)
        path = sde.simulate_one_delta(Z0, uniform3(), Edge(2, 1), sim, mc.stream(5, 0))
        third = path.states[:, 2] - Z0[2]
        np.testing.assert_allclose(third, np.r_[0.0, np.cumsum(path.noise[:, 2])], atol=1e-12)
        assert np.all(path.drift[:, 4:] == 0.0)

    def test_one_delta_needs_weighted_edge(self):
        params = ModelParams(3, beta=np.ones(3), weight=np.array([1.0, 0.0, 1.0]))
        with pytest.raises(ConfigError):
            sde.simulate_one_delta(Z0, params, Edge(3, 1), SimConfig(), mc.stream(0, 0))

    def test_zero_noise_follows_ode(self):
        params = uniform3()
        dt, steps = 1e-4, 3000
        sim = SimConfig(dt_max=dt, t_max=dt * steps)
        path = sde.simulate_many_delta(Z0, params, sim, noise=np.zeros((steps, 3), dtype=complex))

        def rhs(_, y):
            b = model.drift_particles(Configuration(y[:3] + 1j * y[3:]), params)
            return np.r_[b.real, b.imag]

        sol = integrate.solve_ivp(rhs, (0, dt * steps), np.r_[Z0.real, Z0.imag],
                                  rtol=1e-10, atol=1e-12)
        end = sol.y[:3, -1] + 1j * sol.y[3:, -1]
        np.testing.assert_allclose(path.states[-1], end, atol=5e-4)

    def test_same_stream_same_path(self):
        sim = SimConfig(dt_max=1e-3, t_max=0.2)
        a = sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(6, 3))
        b = sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(6, 3))
        np.testing.assert_array_equal(a.states, b.states)

    def test_ineligible_start(self):
        with pytest.raises(ConfigError):
            sde.simulate_many_delta(np.zeros(3), uniform3(), SimConfig(), mc.stream(0, 0))

    def test_contacts_use_hysteresis(self):
        sim = SimConfig(dt_max=1e-3, t_max=3.0, contact_threshold=0.3, radius_floor=1e-3)
        z0 = np.array([0.0, 0.6, 0.3 + 0.6j])
        path = sde.brownian_particles(z0, uniform3(), sim, mc.stream(7, 0))
        expected = rearmed_contacts(path.separations(), 0.3)
        got = sorted((int(np.searchsorted(path.times, c.time)), model.edge_index(c.edge))
                     for c in path.contacts)
        assert len(expected) > 3
        assert got == expected

    def test_contact_budget_stops(self):
        sim = SimConfig(dt_max=1e-3, t_max=50.0, contact_threshold=0.3, radius_floor=1e-3,
                        max_contacts=2)
        path = sde.brownian_particles(np.array([0.0, 0.6, 0.3 + 0.6j]), uniform3(), sim,
                                      mc.stream(7, 0))
        assert path.status == "contact_budget"
        assert len(path.contacts) == 2

    def test_stop_radius_lands_on_level(self):
        sim = SimConfig(dt_max=1e-3, t_max=20.0)
        path = sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(8, 0), stop_radius=0.1)
        assert path.status == "stopped"
        # the crossing is interpolated linearly in position, exact to second order in the step
        assert np.min(np.abs(path.separations()[-1])) == pytest.approx(0.1, rel=1e-3)
        assert np.all(np.abs(path.separations()[:-1]) > 0.1)

    def test_step_budget_marks_absorbed(self):
        sim = SimConfig(dt_max=1e-3, t_max=1.0, max_steps=10)
        path = sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(9, 0))
        assert path.absorbed and path.status == "step_budget"
        assert len(path.times) == 11


class TestRadial:
    def test_drift_formula(self):
        for r in (0.05, 0.5, 2.0):
            x = math.sqrt(2.0) * r
            direct = 1 / (2 * r) - x * special.k1(x) / (r * special.k0(x))
            assert sde.radial_drift(r, 1.0) == pytest.approx(direct, rel=1e-12)

    def test_radius_nonnegative_and_horizon(self):
        sim = SimConfig(dt_max=1e-3, t_max=1.0, dt_scale=0.04, dt_min=1e-9)
        path = sde.simulate_radial_one_delta(0.2, 1.0, sim, mc.stream(10, 0), eps=1e-3)
        assert path.status == "horizon"
        assert np.all(path.radius >= 0.0)
        assert path.times[-1] == pytest.approx(1.0)
        assert path.occupation >= 0.0

    def test_bessel_mean_square(self):
        # E r_t^2 = r_0^2 + d t
        sim = SimConfig(dt_max=1e-3, t_max=1.0, radius_floor=1e-6)
        ends = [sde.simulate_bessel(3.0, 2.0, 0.0, sim, mc.stream(12, k)).radius[-1]
                for k in range(4000)]
        se = np.std(np.square(ends)) / math.sqrt(len(ends))
        assert abs(np.mean(np.square(ends)) - 7.0) < 4 * se

    def test_bessel_dimension_domain(self):
        with pytest.raises(ConfigError):
            sde.simulate_bessel(1.5, 1.0, 0.0, SimConfig(), mc.stream(0, 0))

    def test_bessel_shared_noise(self):
        dbs = np.array([0.1, -0.2, 0.05])
        path = sde.simulate_bessel(3.0, 1.0, 0.5, SimConfig(dt_max=0.01), shared_noise=dbs)
        r = 1.0
        for db in dbs:
            r = r + 0.01 / r + db
        assert path.radius[-1] == pytest.approx(r, rel=1e-12)
        assert path.times[-1] == pytest.approx(0.53)


class TestJsonl:
    def test_round_trip(self, tmp_path):
        sim = SimConfig(dt_max=1e-2, t_max=0.5)
        paths = [sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(13, k)) for k in range(3)]
        out = tmp_path / "paths.jsonl"
        assert sde.write_paths_jsonl(paths, out, stride=7, start_index=10) == 3
        docs = list(sde.read_paths_jsonl(out))
        assert [d["index"] for d in docs] == [10, 11, 12]
        for d, p in zip(docs, paths):
            term = np.array([complex(*z) for z in d["terminal"]])
            np.testing.assert_array_equal(term, p.states[-1])
            assert d["times"][-1] == p.times[-1]
            assert d["times"][:2] == [p.times[0], p.times[7]]

    def test_stream_matches_file(self, tmp_path):
        sim = SimConfig(dt_max=1e-2, t_max=0.1)
        paths = [sde.simulate_many_delta(Z0, uniform3(), sim, mc.stream(14, 0))]
        buf = io.StringIO()
        sde.write_paths_jsonl(paths, buf)
        sde.write_paths_jsonl(paths, tmp_path / "a.jsonl")
        assert buf.getvalue() == (tmp_path / "a.jsonl").read_text()
