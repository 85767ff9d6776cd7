import math

import numpy as np
import pytest
from scipy import stats

from levyavoid import criteria as cr
from levyavoid import exponents as ex
from levyavoid import geometry as geo
from levyavoid import green as gr
from levyavoid import poisson as po
from levyavoid.errors import ConfigError, DomainError, UnsupportedError

from oracles import poisson_growth_exponent

STABLE = gr.GreenModel.exact(ex.stable(1.5))
SCHEDULE = cr.Schedule(1.0, 24)


def _constant(mu0, phi0=0.1):
    return po.IntensityModel(lambda r: mu0 + 0 * np.asarray(r, float), lambda r: phi0 + 0 * np.asarray(r, float))


def _zero():
    return _constant(0.0)


def test_constant_density_count_is_poisson():
    m = _constant(2.0)
    box = po.Box((0, 0, 0), (3, 3, 3))
    counts = np.array([len(po.sample_realization(m, box, seed=s)) for s in range(400)])
    mean = 2.0 * 27
    assert abs(counts.mean() - mean) <= 4 * math.sqrt(mean / 400)
    assert counts.var(ddof=1) / mean == pytest.approx(1.0, abs=0.25)


def test_inverse_norm_density_on_shell():
    m = po.IntensityModel(lambda r: 50.0 / np.asarray(r, float), lambda r: 0.01 + 0 * np.asarray(r, float))
    window = geo.Annulus(1.0, 2.0)
    truth = 4 * math.pi * 50.0 * (2 ** 2 - 1) / 2
    assert po.expected_count(m, window) == pytest.approx(truth, rel=1e-9)
    counts = np.array([len(po.sample_realization(m, window, seed=s)) for s in range(200)])
    assert abs(counts.mean() - truth) <= 4 * math.sqrt(truth / 200)


def test_empty_window():
    real = po.sample_realization(_constant(1.0), geo.Annulus(2.0, 2.0), seed=3)
    assert len(real) == 0


def test_disjoint_regions_are_independent():
    m = _constant(3.0)
    box = po.Box((-2, -2, -2), (2, 2, 2))
    left, right = [], []
    for s in range(300):
        real = po.sample_realization(m, box, seed=s)
        left.append(real.count_in(lambda c: c[:, 0] < 0))
        right.append(real.count_in(lambda c: c[:, 0] >= 0))
    assert abs(stats.pearsonr(left, right)[0]) < 4 / math.sqrt(300)
    # each half is Poisson: a chi-square dispersion check
    dispersion = np.var(left, ddof=1) * 299 / np.mean(left)
    assert stats.chi2.sf(dispersion, 299) > 1e-3 and stats.chi2.cdf(dispersion, 299) > 1e-3


def test_sampling_is_reproducible():
    m = po.IntensityModel.power_law(1.0, 1.0)
    a = po.sample_realization(m, geo.Annulus(1.0, 16.0), seed=7)
    b = po.sample_realization(m, geo.Annulus(1.0, 16.0), seed=7)
    assert np.array_equal(a.centers, b.centers)


def test_unbounded_density_rejected():
    m = po.IntensityModel(lambda r: np.where(np.asarray(r) < 1.5, np.inf, 1.0), lambda r: 0.1 + 0 * np.asarray(r))
    with pytest.raises(DomainError):
        po.sample_realization(m, geo.Annulus(1.0, 2.0))


def test_off_centre_annulus_unsupported():
    with pytest.raises(UnsupportedError):
        po.sample_realization(_constant(1.0), geo.Annulus(1.0, 2.0, center=(1.0, 0.0, 0.0)))


def test_validation_passes_for_mild_power_law():
    m = po.IntensityModel.power_law(1.5, 1.0, C_P=4.0)
    rep = po.validate_intensity(m, ex.stable(1.5), STABLE)
    assert rep.oscillation.passed and rep.radius_bound.passed


def test_validation_radius_bound_fails():
    m = po.IntensityModel(lambda r: 1.0 + 0 * np.asarray(r, float), lambda r: np.asarray(r, float), C_P=4.0)
    rep = po.validate_intensity(m, ex.stable(1.5), STABLE)
    assert not rep.radius_bound.passed and rep.radius_bound.witness is not None


def test_capacity_constant_requires_C_P_above_one():
    with pytest.raises(ConfigError):
        _constant(1.0).__class__(lambda r: r, lambda r: r, C_P=1.0)


def test_grid_needs_three_decades():
    with pytest.raises(ConfigError):
        po.RadialGrid(r_min=2, r_max=100)


def test_zero_density_sums_vanish():
    m = _zero()
    assert po.percolation_integral(m, STABLE, SCHEDULE).partial_sums[-1] == 0.0
    assert po.expected_wiener_sum(m, STABLE, SCHEDULE).partial_sums[-1] == 0.0
    est = po.empirical_capacity_expectation(m, STABLE, geo.WhitneyCube(2, (1, 0, 0)), seeds=50)
    assert est.lower == est.upper == 0.0


def test_compact_support_converges():
    m = po.IntensityModel(lambda r: np.where(np.asarray(r, float) < 10, 1.0, 0.0),
                          lambda r: 0.1 + 0 * np.asarray(r, float))
    assert po.percolation_integral(m, STABLE, SCHEDULE).classification == cr.CONVERGES


def test_sums_monotone_in_density():
    small = po.IntensityModel.power_law(1.0, 1.0, mu0=0.5)
    large = po.IntensityModel.power_law(1.0, 1.0, mu0=2.0)
    for f in (po.percolation_integral, po.expected_wiener_sum):
        a = np.array(f(small, STABLE, SCHEDULE).partial_sums)
        b = np.array(f(large, STABLE, SCHEDULE).partial_sums)
        assert np.all(a <= b)


def test_single_generation_has_26_cubes():
    m = _constant(1.0)
    v = po.expected_wiener_sum(m, STABLE, cr.Schedule(1.0, 8), j_min=1)
    assert len(geo.whitney_decompose(3, 1, 1)) == 26
    assert v.partial_sums[-1] > 0


@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
@pytest.mark.parametrize("s", [0.0, 0.5, 1.0])
def test_percolation_and_wiener_agree(gamma, s):
    m = po.IntensityModel.power_law(gamma, s)
    a = po.percolation_integral(m, STABLE, SCHEDULE)
    b = po.expected_wiener_sum(m, STABLE, SCHEDULE)
    assert a.classification == b.classification
    slope = poisson_growth_exponent(gamma, s, 1.5)
    if abs(slope) > 0.1:
        want = cr.DIVERGES if slope > 0 else cr.CONVERGES
        assert a.classification == want
    if slope > 0.1:
        assert a.growth_exponent == pytest.approx(slope, abs=0.05)


def test_tiny_density_scales_linearly():
    cube = geo.WhitneyCube(2, (1, 0, 0))
    m = po.IntensityModel.power_law(1.0, 0.0, mu0=0.02)
    est = po.empirical_capacity_expectation(m, STABLE, cube, seeds=200, seed=1)
    # with rare balls the union capacity is the sum of single-ball capacities
    assert est.lower <= est.upper
    assert abs(est.upper - est.lower) <= 0.1 * est.upper + 2 * est.upper_ci


def test_too_few_seeds():
    with pytest.raises(ConfigError):
        po.empirical_capacity_expectation(_constant(1.0), STABLE, geo.WhitneyCube(2, (1, 0, 0)), seeds=10)


def test_capacity_expectation_needs_exact_model():
    env = gr.GreenModel.envelope(ex.stable(1.5))
    with pytest.raises(UnsupportedError):
        po.empirical_capacity_expectation(_constant(1.0), env, geo.WhitneyCube(2, (1, 0, 0)), seeds=50)


def test_realization_csv(tmp_path):
    real = po.sample_realization(_constant(1.0), po.Box((0, 0, 0), (2, 2, 2)), seed=1)
    real.write_csv(tmp_path / "r.csv")
    back = geo.read_family_csv(tmp_path / "r.csv")
    assert len(back) == len(real)
