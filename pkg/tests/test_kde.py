import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from flowaug.errors import DegenerateSamples, InsufficientSamples, InvalidBandwidth, InvalidRange
from flowaug.kde import (
    ConstantModel,
    KdeModel,
    fit_or_constant,
    kde_cdf,
    kde_fit,
    kde_pdf,
    kde_sample,
    round_clamp,
    sample_clamped_int,
    silverman_bandwidth,
)


def test_pdf_two_points_unit_bandwidth():
    model = kde_fit([-1.0, 1.0], bandwidth=1.0)
    assert abs(kde_pdf(model, 0.0) - math.exp(-0.5) / math.sqrt(2 * math.pi)) < 1e-12


def test_pdf_matches_scipy_gaussian_kde():
    rng = np.random.default_rng(3)
    x = rng.normal(size=200)
    h = silverman_bandwidth(x)
    ours = kde_fit(x, h)
    # scipy's bw_method is a factor on the (ddof=1) deviation
    ref = stats.gaussian_kde(x, bw_method=h / np.std(x, ddof=1))
    grid = np.linspace(-4, 4, 41)
    assert np.allclose(ours.pdf(grid), ref(grid), rtol=1e-10, atol=1e-14)


def test_pdf_integrates_to_one():
    model = kde_fit([0.0, 0.3, 2.0, 5.5], bandwidth=0.7)
    total, _ = integrate.quad(lambda t: kde_pdf(model, t), -20, 30, limit=200)
    assert abs(total - 1.0) < 1e-6


def test_sample_ks_against_mixture_cdf():
    model = kde_fit(np.array([-2.0, 0.0, 0.5, 3.0]), bandwidth=0.8)
    draws = kde_sample(model, 100_000, 42)
    res = stats.kstest(draws, lambda t: kde_cdf(model, t))
    assert res.statistic < 0.01


def test_silverman_value():
    # a sample with unit Bessel-corrected deviation and n = 100
    rng = np.random.default_rng(0)
    x = rng.normal(size=100)
    x = (x - x.mean()) / x.std(ddof=1)
    assert abs(silverman_bandwidth(x) - (4 / 300) ** 0.2) < 1e-12


@given(st.floats(0.1, 50.0))
@settings(max_examples=25, deadline=None)
def test_silverman_homogeneity(c):
    x = np.random.default_rng(1).normal(size=57)
    assert silverman_bandwidth(c * x) == pytest.approx(c * silverman_bandwidth(x), rel=1e-12)


def test_silverman_scale_25():
    x = np.random.default_rng(8).exponential(size=300)
    assert abs(silverman_bandwidth(2.5 * x) / (2.5 * silverman_bandwidth(x)) - 1) < 1e-12


def test_silverman_errors():
    with pytest.raises(InsufficientSamples):
        silverman_bandwidth([1.0])
    with pytest.raises(DegenerateSamples):
        silverman_bandwidth([2.0, 2.0, 2.0])


def test_fit_errors():
    with pytest.raises(InsufficientSamples):
        kde_fit([1.0])
    with pytest.raises(InvalidBandwidth):
        kde_fit([1.0, 2.0], bandwidth=0.0)
    with pytest.raises(InvalidBandwidth):
        KdeModel(np.array([1.0]), -1.0)


def test_fit_or_constant():
    assert isinstance(fit_or_constant([100, 100, 100]), ConstantModel)
    assert isinstance(fit_or_constant([7]), ConstantModel)
    assert isinstance(fit_or_constant([1, 2, 3]), KdeModel)
    assert np.all(fit_or_constant([5.0, 5.0]).sample(10, 0) == 5.0)


def test_samples_are_read_only():
    model = kde_fit([1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        model.samples[0] = 9.0


def test_sampling_deterministic():
    model = kde_fit([1.0, 2.0, 4.0])
    assert np.array_equal(kde_sample(model, 50, 9), kde_sample(model, 50, 9))
    assert not np.array_equal(kde_sample(model, 50, 9), kde_sample(model, 50, 10))


def test_mixture_mean_matches_data_mean():
    x = np.array([1.0, 2.0, 10.0])
    draws = kde_sample(kde_fit(x, 0.5), 200_000, 1)
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - x.mean()) < 4 * se


def test_round_clamp_half_up():
    assert round_clamp([0.5, 1.5, 2.49, -0.5, -3.0, 70000.2], 0, 65535).tolist() == [1, 2, 2, 0, 0, 65535]
    with pytest.raises(InvalidRange):
        round_clamp([1.0], 5, 4)


def test_sample_clamped_int_range():
    model = kde_fit([0.0, 5.0, 65535.0], bandwidth=2000.0)
    v = sample_clamped_int(model, 5000, 0, 65535, 3)
    assert v.dtype == np.int64 and v.min() >= 0 and v.max() <= 65535
    with pytest.raises(InvalidRange):
        sample_clamped_int(model, 5, 10, 1, 0)
