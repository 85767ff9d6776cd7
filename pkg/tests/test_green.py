import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from levyavoid import exponents as ex
from levyavoid import green as gr
from levyavoid.errors import ConfigError, DomainError, UnsupportedError

from oracles import riesz_ball_capacity, riesz_green

BROWNIAN = gr.GreenModel.exact(ex.brownian())
STABLE = gr.GreenModel.exact(ex.stable(1.5))


def test_newtonian_green():
    assert BROWNIAN.value(2.0) == pytest.approx(1 / (8 * math.pi), rel=1e-14)


@pytest.mark.parametrize("beta", [0.5, 1.0, 1.5])
def test_riesz_green_matches_mpmath(beta):
    model = gr.GreenModel.exact(ex.stable(beta))
    for r in (0.01, 1.0, 37.0):
        assert model.value(r) == pytest.approx(riesz_green(r, beta), rel=1e-12)


def test_riesz_constant_closed_form():
    assert gr.riesz_constant(3, 1.5) == pytest.approx(
        math.gamma(0.75) / (2 ** 1.5 * math.pi ** 1.5 * math.gamma(0.75)), rel=1e-14)


def test_exact_mode_rejects_non_stable():
    with pytest.raises(ConfigError):
        gr.GreenModel.exact(ex.stable_sum(0.5, 1.5))


def test_envelope_at_one_for_stable_sum():
    m = gr.GreenModel.envelope(ex.stable_sum(0.5, 1.5))
    assert m.lower(1.0) == pytest.approx(1 / (2 * m.C_G))
    assert m.upper(1.0) == pytest.approx(m.C_G / 2)


def test_nonpositive_radius():
    with pytest.raises(DomainError):
        gr.green_eval(BROWNIAN, 0.0)


@pytest.mark.parametrize("beta", [0.8, 1.5])
def test_exact_values_inside_fitted_envelope(beta):
    exp = ex.stable(beta)
    env = gr.GreenModel.envelope(exp)
    exact = gr.GreenModel.exact(exp)
    r = np.logspace(-3, 3, 61)
    g = exact.value(r)
    assert np.all(env.lower(r) <= g * (1 + 1e-9))
    assert np.all(g <= env.upper(r) * (1 + 1e-9))


def test_scaling_bounds_stable():
    r, lam = 3.0, 0.5
    b = gr.green_scaling_bounds(STABLE, lam, r)
    exact = STABLE.value(lam * r)
    assert exact / STABLE.value(r) == pytest.approx(0.5 ** -1.5)
    assert b.lo <= exact <= b.hi * (1 + 1e-12)


def test_scaling_bounds_brownian():
    b = gr.green_scaling_bounds(BROWNIAN, 0.1, 3.0)
    assert b.lo <= BROWNIAN.value(0.3) <= b.hi * (1 + 1e-12)


def test_scaling_bounds_rejects_large_lambda():
    with pytest.raises(DomainError):
        gr.green_scaling_bounds(BROWNIAN, 1.5, 1.0)


def test_newtonian_capacity():
    for r in (0.5, 1.0, 3.0):
        assert gr.capacity_ball(BROWNIAN, r).exact == pytest.approx(4 * math.pi * r, rel=1e-14)


@pytest.mark.parametrize("beta", [0.8, 1.5])
def test_riesz_capacity_matches_equilibrium_measure(beta):
    model = gr.GreenModel.exact(ex.stable(beta))
    for r in (0.3, 1.0, 2.0):
        assert gr.capacity_ball(model, r).exact == pytest.approx(riesz_ball_capacity(r, beta), rel=1e-9)


def test_stable_capacity_ratio():
    ratio = gr.capacity_ball(STABLE, 2.0).exact / gr.capacity_ball(STABLE, 1.0).exact
    assert ratio == pytest.approx(2 ** 1.5, rel=1e-12)


def test_envelope_capacity_ordering():
    cap = gr.capacity_ball(gr.GreenModel.envelope(ex.stable_sum(0.5, 1.5)), 1.0)
    assert 0 < cap.lower <= cap.upper


def test_scaling_identity_brownian_a2():
    left, right = gr.capacity_scaling_identity(BROWNIAN, 2.0)
    assert left == pytest.approx(8 * math.pi, rel=1e-12)
    assert right == pytest.approx(8 * math.pi, rel=1e-12)


@pytest.mark.parametrize("model", [BROWNIAN, STABLE], ids=["brownian", "stable"])
@pytest.mark.parametrize("a", [0.1, 0.5, 1.0, 2.0, 10.0])
def test_scaling_identity_exact(model, a):
    left, right = gr.capacity_scaling_identity(model, a)
    assert abs(left - right) <= 1e-10 * abs(right)


def test_scaling_identity_envelope_endpoints():
    m = gr.GreenModel.envelope(ex.stable_sum(0.5, 1.5))
    left, right = gr.capacity_scaling_identity(m, 2.0)
    assert left.lo == pytest.approx(right.lo, rel=1e-6)
    assert left.hi == pytest.approx(right.hi, rel=1e-6)


def test_hitting_envelope_examples():
    env = gr.hitting_envelope(BROWNIAN, [0, 0, 0], 1.0, [2, 0, 0])
    assert env.upper == pytest.approx(0.5)
    assert gr.hitting_envelope(STABLE, [0, 0, 0], 1.0, [4, 0, 0]).upper == pytest.approx(0.125)
    inside = gr.hitting_envelope(STABLE, [1, 1, 1], 1.0, [1.2, 1, 1])
    assert (inside.lower, inside.upper) == (1.0, 1.0)


def test_hitting_envelope_without_constant_has_zero_lower():
    env = gr.hitting_envelope(STABLE, [0, 0, 0], 1.0, [3, 0, 0])
    assert env.lower == 0.0


@given(st.floats(1.001, 50), st.floats(1.0, 2.0))
def test_hitting_envelope_upper_nonincreasing(dist, factor):
    a = gr.hitting_envelope(STABLE, [0, 0, 0], 1.0, [dist, 0, 0]).upper
    b = gr.hitting_envelope(STABLE, [0, 0, 0], 1.0, [dist * factor, 0, 0]).upper
    assert b <= a * (1 + 1e-12)


def test_capacity_equivalent_radius():
    assert gr.capacity_equivalent_radius(BROWNIAN, 1.0) == pytest.approx(3 ** (1 / 3), rel=1e-12)
    ratio = gr.capacity_equivalent_radius(STABLE, 4.0) / gr.capacity_equivalent_radius(STABLE, 1.0)
    assert ratio == pytest.approx(2.0, rel=1e-12)
    eta = [gr.capacity_equivalent_radius(STABLE, r) for r in np.logspace(-6, 0, 30)]
    assert np.all(np.diff(eta) > 0) and eta[0] < 1e-2


def test_increment_bound_examples():
    x, y = np.array([1.0, 0, 0]), np.array([1.1, 0, 0])
    diff = abs(BROWNIAN.value(1.0) - BROWNIAN.value(1.1))
    assert diff == pytest.approx((1 - 1 / 1.1) / (4 * math.pi))
    assert diff <= gr.green_increment_bound(BROWNIAN, x, y)
    assert gr.green_increment_bound(BROWNIAN, x, x) == 0.0


@given(st.floats(0.05, 20), st.floats(0.05, 20))
def test_increment_bound_property(u, v):
    x, y = np.array([u, 0.0, 0.0]), np.array([0.0, v, 0.0])
    diff = abs(STABLE.value(u) - STABLE.value(v))
    assert diff <= gr.green_increment_bound(STABLE, x, y) * (1 + 1e-9)


def test_increment_bound_unsupported_for_custom():
    exp = ex.custom(lambda r: np.asarray(r, float) ** 2 * (2 + np.sin(r)), 3, alpha=2.0, C_L=0.1)
    model = gr.GreenModel.envelope(exp, C_G=50.0)
    with pytest.raises(UnsupportedError):
        gr.green_increment_bound(model, [1, 0, 0], [2, 0, 0])


def test_m_psi_closed_forms():
    assert gr.m_psi_ball(ex.brownian(), [0, 0, 0], 1.0) == pytest.approx(4 * math.pi, rel=1e-8)
    assert gr.m_psi_ball(ex.stable(1.5), [0, 0, 0], 2.0) == pytest.approx(4 * math.pi * 2 ** 1.5 / 1.5, rel=1e-8)


def test_m_psi_doubling():
    rng = np.random.default_rng(3)
    ratios = []
    for _ in range(100):
        x = rng.normal(size=3) * 10 ** rng.uniform(-1, 2)
        r = 10 ** rng.uniform(-2, 2)
        ratios.append(gr.m_psi_ball(ex.stable(1.5), x, 2 * r) / gr.m_psi_ball(ex.stable(1.5), x, r))
    # Lebesgue doubling 2**3 times at most (3/2)**1.5 from the weight growing toward the origin
    assert max(ratios) <= 8 * 1.5 ** 1.5
    assert min(ratios) > 1


def test_green_csv(tmp_path):
    path = tmp_path / "g.csv"
    gr.write_green_csv(path, STABLE, [0.5, 1.0, 2.0])
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0]) == gr.GREEN_CSV_COLUMNS
    assert len(rows) == 3
    assert float(rows[1]["G"]) == pytest.approx(STABLE.value(1.0))
