import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from manydelta import specfun
from manydelta.specfun import DomainError


def test_reference_values():
    assert specfun.k0(1.0) == pytest.approx(0.4210244382, abs=1e-10)
    assert specfun.k1(1.0) == pytest.approx(0.6019072302, abs=1e-10)
    assert specfun.khat(0, 2.0) == pytest.approx(0.1138938727, abs=1e-10)
    assert specfun.khat(1, 1.0) == pytest.approx(0.6019072302, abs=1e-10)


def test_against_integral_oracle(oracle):
    rows = np.array(oracle["x_K0_K1"], dtype=float)
    x, k0_ref, k1_ref = rows.T
    assert len(x) == 200
    assert np.max(np.abs(specfun.k0(x) / k0_ref - 1)) <= 1e-10
    assert np.max(np.abs(specfun.k1(x) / k1_ref - 1)) <= 1e-10
    assert np.max(np.abs(specfun.khat(1, x) / (x * k1_ref) - 1)) <= 1e-10


def test_small_argument_bands():
    x = 1e-10
    assert 1.0 <= specfun.k0(x) / math.log(1 / x) <= 1.01
    assert 1 - 1e-6 <= x * specfun.k1(x) <= 1.0
    assert 1 - 1e-6 <= 1e-8 * specfun.k1(1e-8) <= 1.0


def test_large_argument_bands():
    x = 50.0
    lead = math.sqrt(math.pi / (2 * x)) * math.exp(-x)
    assert 0.99 <= specfun.k0(x) / lead <= 1.0
    assert 1.0 <= specfun.k1(x) / lead <= 1.02


def test_khat_extension_and_domain():
    assert specfun.khat(1, 0.0) == 1.0
    with pytest.raises(DomainError):
        specfun.khat(0, 0.0)
    with pytest.raises(DomainError):
        specfun.khat(2, 1.0)


@pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
def test_domain_errors(bad):
    with pytest.raises(DomainError):
        specfun.k0(bad)
    with pytest.raises(DomainError):
        specfun.k1(bad)
    with pytest.raises(DomainError):
        specfun.ratio_khat1_k0(bad)


def test_g_nu():
    assert specfun.g_nu(1, 0.0) == 1.0
    assert specfun.g_nu(0, 4.0) == pytest.approx(specfun.k0(2.0), rel=1e-15)
    r = 0.3
    assert specfun.g_nu(1, 2 * r * r) == pytest.approx(specfun.khat(1, r * math.sqrt(2)), rel=1e-14)


def test_ratio_examples():
    small = specfun.ratio_khat1_k0(1e-6)
    assert small == pytest.approx(1 / math.log(2e6), rel=0.1)
    assert specfun.ratio_khat1_k0(0.5) < specfun.ratio_khat1_k0(1.0) < specfun.ratio_khat1_k0(2.0)
    assert 99 <= specfun.ratio_khat1_k0(100.0) <= 101
    assert math.isfinite(specfun.ratio_khat1_k0(1e5))


def test_log_values_agree():
    for x in (1e-3, 1.0, 20.0, 300.0):
        v0, v1 = specfun.k0_value(x), specfun.k1_value(x)
        if v0.value > 0:
            assert math.exp(v0.log_value) == pytest.approx(v0.value, rel=1e-12)
            assert math.exp(v1.log_value) == pytest.approx(v1.value, rel=1e-12)
    assert math.isfinite(specfun.log_k0(1e4))


def test_monotonicity_on_grid():
    x = np.geomspace(1e-6, 60, 2000)
    assert np.all(np.diff(specfun.k0(x)) < 0)
    assert np.all(np.diff(specfun.khat(1, x)) < 0)
    assert np.all(np.diff(specfun.ratio_khat1_k0(x)) > 0)


def test_derivative_identity():
    x = np.geomspace(0.01, 10, 200)
    h = 1e-6 * x
    deriv = (specfun.khat(1, x + h) - specfun.khat(1, x - h)) / (2 * h)
    assert np.allclose(deriv, -x * specfun.k0(x), rtol=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-8, 600.0))
def test_ratio_log_branch_continuous(x):
    r = specfun.ratio_khat1_k0(x)
    assert r > 0 and math.isfinite(r)
    assert specfun.ratio_khat1_k0(x * (1 + 1e-9)) >= r * (1 - 1e-12)
