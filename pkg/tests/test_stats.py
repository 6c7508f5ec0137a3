import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sst

from emclt.stats import (DegenerateFitError, ks_statistic, lp_norm, lp_norm_mc, rate_fit,
                         w1_sampling_floor, w1_standard_error, wasserstein1)

samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=60)


@settings(max_examples=60, deadline=None)
@given(samples, samples)
def test_w1_and_ks_match_scipy(x, y):
    assert wasserstein1(x, y) == pytest.approx(sst.wasserstein_distance(x, y), rel=1e-9, abs=1e-9)
    assert ks_statistic(x, y) == pytest.approx(sst.ks_2samp(x, y, method="asymp").statistic, abs=1e-12)


def test_equal_samples_give_zero():
    x = np.random.default_rng(0).normal(size=500)
    assert wasserstein1(x, x.copy()) == 0.0
    assert ks_statistic(x, x[::-1]) == 0.0


def test_w1_shifted_gaussians():
    rng = np.random.default_rng(1)
    m = 0.3
    x, y = rng.normal(size=20000), rng.normal(m, 1, size=20000)
    w = wasserstein1(x, y)
    se = w1_standard_error(x, y, n_boot=50)
    assert abs(w - m) < 3 * se + 1e-3


def test_w1_floor_positive_and_small():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=4000), rng.normal(size=4000)
    floor = w1_sampling_floor(x, y, 20)
    assert 0 < floor < 0.1
    assert wasserstein1(x, y) < 3 * floor


def test_lp_norm_examples():
    est = lp_norm(np.full(100, -2.5), 3)
    assert est.value == 2.5 and est.se == 0
    with pytest.raises(ValueError):
        lp_norm(np.ones(5), 0.5)
    with pytest.raises(FloatingPointError, match="position 3"):
        lp_norm([1.0, 2.0, 3.0, np.inf])


def _gauss(idx):
    from emclt.paths import sample_increments
    return sample_increments(1, 1, 99, idx)[:, 0, 0]


def test_lp_norm_gaussian_moments():
    e2 = lp_norm_mc(_gauss, 2, 100_000, batch_size=10_000)
    assert abs(e2.value - 1) < 3 * e2.se
    e4 = lp_norm_mc(_gauss, 4, 100_000, batch_size=10_000)
    assert abs(e4.value - 3**0.25) < 3 * e4.se


def test_lp_norm_mc_reports_path_index():
    def sampler(idx):
        idx = np.asarray(idx)
        return np.where(idx == 37, np.nan, 1.0)
    with pytest.raises(FloatingPointError, match="37"):
        lp_norm_mc(sampler, 2, 64, batch_size=16)


def test_lp_norm_mc_threads_match_serial():
    a = lp_norm_mc(_gauss, 2, 5000, batch_size=500, threads=1)
    b = lp_norm_mc(_gauss, 2, 5000, batch_size=500, threads=4)
    assert a == b


@pytest.mark.parametrize("rate", [0.5, 1.0])
def test_rate_fit_exact_power_laws(rate):
    ns = 2.0 ** np.arange(4, 11)
    fit = rate_fit(ns, 3 * ns**-rate)
    assert fit.slope == pytest.approx(-rate, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0)


def test_rate_fit_validation():
    with pytest.raises(DegenerateFitError):
        rate_fit([1, 2], [1, 1])
    with pytest.raises(DegenerateFitError):
        rate_fit([1, 2, 4], [1.0, 0.0, 1.0])
    with pytest.raises(ValueError, match="increasing"):
        rate_fit([4, 2, 8], [1.0, 1.0, 1.0])


@pytest.mark.parametrize("weighted", [True, False])
def test_rate_fit_ci_coverage(weighted):
    rng = np.random.default_rng(7 + weighted)
    ns = 2.0 ** np.arange(4, 11)
    true = -0.5
    rel = 0.05
    hits = 0
    for _ in range(500):
        clean = 2 * ns**true
        noisy = clean * np.exp(rel * rng.normal(size=len(ns)))
        fit = rate_fit(ns, noisy, noisy * rel if weighted else None)
        hits += fit.slope_ci[0] <= true <= fit.slope_ci[1]
    # 95% nominal, binomial sd about 1%
    assert 0.92 <= hits / 500 <= 0.98
