import numpy as np
import pytest
from scipy import integrate

from flow_spectral_chaos.distributions import Distribution, DistributionKind, ProductMeasure, sample
from flow_spectral_chaos.errors import InvalidParametersError, UnknownVariantError

# Each tuple: (test_name, name, kwargs, expected_kind, expected_params)
from_call_data = [
    ("uniform", "uniform", {"a": 1, "b": 2}, DistributionKind.UNIFORM, (1.0, 2.0)),
    ("beta_unit_interval_default", "beta", {"alpha": 2, "beta": 5}, DistributionKind.BETA, (2.0, 5.0, 0.0, 1.0)),
    ("beta_shifted", "beta", {"alpha": 2, "beta": 5, "a": 340, "b": 460}, DistributionKind.BETA,
     (2.0, 5.0, 340.0, 460.0)),
    ("gamma_default_origin", "gamma", {"alpha": 10, "beta": 0.1}, DistributionKind.GAMMA, (10.0, 0.1, 0.0)),
    ("normal", "normal", {"mu": 2.5, "sigma": 0.125}, DistributionKind.NORMAL, (2.5, 0.125)),
    ("case_insensitive_name", "Uniform", {"a": -1, "b": 1}, DistributionKind.UNIFORM, (-1.0, 1.0)),
]


@pytest.mark.parametrize("test_name, name, kwargs, expected_kind, expected_params", from_call_data)
def test_from_call(test_name, name, kwargs, expected_kind, expected_params):
    dist = Distribution.from_call(name, kwargs)
    assert dist.kind is expected_kind, f"Test failed for: {test_name}"
    assert dist.params == expected_params, f"Test failed for: {test_name}"


# Each tuple: (test_name, name, kwargs, expected_error)
invalid_data = [
    ("uniform_reversed", "uniform", {"a": 2, "b": 1}, InvalidParametersError),
    ("beta_zero_alpha", "beta", {"alpha": 0, "beta": 5}, InvalidParametersError),
    ("gamma_negative_rate", "gamma", {"alpha": 2, "beta": -1}, InvalidParametersError),
    ("normal_zero_sigma", "normal", {"mu": 0, "sigma": 0}, InvalidParametersError),
    ("missing_parameter", "uniform", {"a": 0}, InvalidParametersError),
    ("unknown_parameter", "normal", {"mu": 0, "sigma": 1, "skew": 2}, InvalidParametersError),
    ("non_finite", "uniform", {"a": 0, "b": float("inf")}, InvalidParametersError),
    ("unknown_family", "cauchy", {"a": 0}, UnknownVariantError),
]


@pytest.mark.parametrize("test_name, name, kwargs, expected_error", invalid_data)
def test_invalid_parameters(test_name, name, kwargs, expected_error):
    with pytest.raises(expected_error):
        Distribution.from_call(name, kwargs)


laws = [
    ("uniform", Distribution.uniform(1.0, 2.0)),
    ("beta", Distribution.beta(2.0, 5.0, 340.0, 460.0)),
    ("gamma", Distribution.gamma(10.0, 0.1, 340.0)),
    ("normal", Distribution.normal(2.5, 0.125)),
]


def _bounds(dist):
    lo, hi = dist.support
    if not np.isfinite(lo):
        lo = dist.frozen.ppf(1e-14)
    if not np.isfinite(hi):
        hi = dist.frozen.isf(1e-14)
    return lo, hi


@pytest.mark.parametrize("test_name, dist", laws)
def test_density_integrates_to_one(test_name, dist):
    lo, hi = _bounds(dist)
    total, _ = integrate.quad(dist.density, lo, hi, limit=200)
    assert abs(total - 1.0) < 1e-8, f"Test failed for: {test_name}"


@pytest.mark.parametrize("test_name, dist", laws)
def test_density_vanishes_outside_support(test_name, dist):
    lo, hi = dist.support
    if np.isfinite(lo):
        assert dist.density(lo - 1.0) == 0.0, f"Test failed for: {test_name}"
    if np.isfinite(hi):
        assert dist.density(hi + 1.0) == 0.0, f"Test failed for: {test_name}"


# Each tuple: (test_name, dist, expected_mean, expected_variance)
moment_data = [
    ("uniform", Distribution.uniform(1.0, 2.0), 1.5, 1.0 / 12.0),
    ("beta_unit", Distribution.beta(2.0, 5.0), 2.0 / 7.0, 10.0 / 392.0),
    ("gamma_shifted", Distribution.gamma(10.0, 0.1, 340.0), 440.0, 1000.0),
    ("normal", Distribution.normal(2.5, 0.125), 2.5, 0.015625),
]


@pytest.mark.parametrize("test_name, dist, expected_mean, expected_variance", moment_data)
def test_analytic_moments(test_name, dist, expected_mean, expected_variance):
    assert dist.mean() == pytest.approx(expected_mean, rel=1e-12), f"Test failed for: {test_name}"
    assert dist.variance() == pytest.approx(expected_variance, rel=1e-12), f"Test failed for: {test_name}"


def test_raw_moments_of_symmetric_uniform():
    dist = Distribution.uniform(-1.0, 1.0)
    assert dist.moment(0) == 1.0
    assert dist.moment(2) == pytest.approx(1.0 / 3.0)
    assert dist.moment(3) == pytest.approx(0.0, abs=1e-15)
    assert dist.moment(4) == pytest.approx(1.0 / 5.0)


def test_product_density_multiplies_factors():
    measure = ProductMeasure.of(Distribution.uniform(0.0, 2.0), Distribution.uniform(0.0, 4.0))
    values = measure.density([[1.0, 1.0], [3.0, 1.0]])
    assert values[0] == pytest.approx(0.125)
    assert values[1] == 0.0


def test_sampling_is_seed_deterministic():
    measure = ProductMeasure.of(Distribution.uniform(85.0, 115.0), Distribution.beta(2.0, 5.0, 340.0, 460.0))
    first = sample(measure, 1000, seed=7)
    second = sample(measure, 1000, seed=7)
    other = sample(measure, 1000, seed=8)
    assert first.shape == (1000, 2)
    assert np.array_equal(first, second)
    assert not np.array_equal(first, other)


def test_sample_streams_are_independent():
    measure = ProductMeasure.of(Distribution.normal(0.0, 1.0))
    assert not np.array_equal(measure.sample(100, 3, stream=0), measure.sample(100, 3, stream=1))


@pytest.mark.parametrize("test_name, dist", laws)
def test_samples_match_law(test_name, dist):
    draws = sample(dist, 20_000, seed=11)[:, 0]
    lo, hi = dist.support
    assert np.all(draws >= lo) and np.all(draws <= hi), f"Test failed for: {test_name}"
    stderr = np.sqrt(dist.variance() / draws.shape[0])
    assert abs(draws.mean() - dist.mean()) < 5.0 * stderr, f"Test failed for: {test_name}"


def test_sample_count_must_be_positive():
    with pytest.raises(InvalidParametersError):
        sample(Distribution.uniform(0.0, 1.0), 0, seed=1)
