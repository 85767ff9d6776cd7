import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levyavoid import exponents as ex
from levyavoid.errors import ConfigError


def test_stable_envelope_is_the_power():
    assert ex.eval_psi_star(ex.stable(1.5), 2.0) == pytest.approx(2 ** 1.5, rel=1e-12)


def test_stable_sum_envelope_at_one():
    assert ex.eval_psi_star(ex.stable_sum(0.5, 1.5), 1.0) == pytest.approx(2.0, rel=1e-12)


def test_custom_envelope_matches_dense_grid():
    f = lambda r: np.asarray(r, float) ** 2 * (2 + np.sin(r))
    exp = ex.custom(f, 3, alpha=2.0, C_L=0.1)
    grid = np.linspace(0, 10, 1_000_001)
    brute = f(grid).max()
    val = ex.eval_psi_star(exp, 10.0)
    assert val > f(10.0)
    assert val == pytest.approx(brute, rel=1e-6)


@given(st.floats(1e-3, 1e3))
def test_envelope_dominates_and_is_comparable(r):
    f = lambda s: np.asarray(s, float) ** 2 * (2 + np.sin(s))
    exp = ex.custom(f, 3, alpha=2.0, C_L=0.1)
    star = float(exp.psi_star(r))
    assert f(r) <= star * (1 + 1e-12)
    assert star <= 12 * f(r)


def test_lower_scaling_power_law_is_tight():
    rep = ex.verify_lower_scaling(ex.stable(0.7))
    assert rep.passed
    assert rep.worst_ratio == pytest.approx(1.0, abs=1e-9)


def test_lower_scaling_stable_sum_passes():
    rep = ex.verify_lower_scaling(ex.stable_sum(0.5, 1.5))
    assert rep.passed and rep.worst_ratio >= 1 - 1e-9


def test_lower_scaling_overstated_index_fails_with_witness():
    exp = ex.custom(lambda r: np.asarray(r, float) ** 1.5, 3, alpha=1.6)
    rep = ex.verify_lower_scaling(exp)
    assert not rep.passed
    lam, r = rep.witness["lambda"], rep.witness["r"]
    assert lam > 1
    assert exp(lam * r) / exp(r) < lam ** 1.6


def test_grid_with_too_few_decades():
    with pytest.raises(ConfigError):
        ex.GridSpec(lam_max=5.0)


@pytest.mark.parametrize("a", [0.01, 0.3, 7.0, 500.0])
def test_rescaled_exponent_keeps_lower_scaling(a):
    assert ex.verify_lower_scaling(ex.stable_sum(0.5, 1.5).scaled(a)).passed


def test_bernstein_pure_power():
    assert ex.verify_H1_H2(ex.BernsteinSpec(lambda t: t ** 0.4, 0.4, 0.4, 0.4, 0.4)).passed


def test_bernstein_two_powers():
    spec = ex.BernsteinSpec(lambda t: t ** 0.3 + t ** 0.6, 0.3, 0.6, 0.3, 0.6)
    assert ex.verify_H1_H2(spec).passed


def test_bernstein_identity_is_excluded():
    assert not ex.verify_H1_H2(ex.BernsteinSpec(lambda t: t, 1, 1, 1, 1)).passed


def test_bernstein_index_order():
    with pytest.raises(ConfigError):
        ex.BernsteinSpec(lambda t: t ** 0.5, 0.6, 0.4, 0.5, 0.5)


def test_transience_cases():
    assert ex.validate_transience(ex.stable(1.5)).status == "Transient"
    s2 = ex.subordinate_bm(ex.BernsteinSpec(lambda t: t ** 0.45, 0.45, 0.45, 0.45, 0.45), d=2)
    assert ex.validate_transience(s2).status == "Transient"
    s1 = ex.subordinate_bm(ex.BernsteinSpec(lambda t: t ** 0.7, 0.7, 0.7, 0.7, 0.7), d=1)
    assert ex.validate_transience(s1).status == "Unsupported"
    with pytest.raises(ConfigError):
        ex.validate_transience(ex.custom(lambda r: np.asarray(r, float) ** 2, 2, alpha=2.0))


@given(st.floats(0.1, 1.99), st.floats(1e-3, 1e3), st.floats(1.0, 1e3))
def test_stable_lower_scaling_property(beta, r, lam):
    exp = ex.stable(beta)
    assert exp(lam * r) >= lam ** beta * exp(r) * (1 - 1e-12)


def test_brownian_is_stable_two():
    b = ex.brownian()
    assert b.is_brownian and b(3.0) == pytest.approx(9.0)
    assert math.isclose(ex.stable(2.0)(3.0), 9.0)
