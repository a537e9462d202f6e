import math

import numpy as np
import pytest
from scipy import integrate, optimize, stats

from fedblur.accountant import (
    DEFAULT_ORDERS,
    PrivacyLedger,
    calibrate_sigma,
    compose_and_convert,
    epsilon_for,
    rdp_gaussian,
    rdp_subsampled_gaussian,
)
from fedblur.errors import CalibrationError, ConfigError, QueryError


def order2_quadrature(p, sigma):
    """log E_{z~N(0,s^2)}[(mixture/N(0,s^2))^2] by numerical integration."""
    def integrand(z):
        ratio = (1 - p) + p * math.exp((2 * z - 1) / (2 * sigma**2))
        return stats.norm.pdf(z, scale=sigma) * ratio**2
    lo, hi = -40 * sigma, 40 * sigma + 1
    value, _ = integrate.quad(integrand, lo, hi, epsabs=1e-14, epsrel=1e-12, limit=400)
    return math.log(value)


def exact_gaussian_epsilon(sigma, delta):
    """Tight epsilon of the sensitivity-1 Gaussian mechanism at delta."""
    def delta_of(eps):
        a = 1 / (2 * sigma)
        return stats.norm.cdf(a - eps * sigma) - math.exp(eps) * stats.norm.cdf(-a - eps * sigma) - delta
    if delta_of(0.0) <= 0:
        return 0.0
    return optimize.brentq(delta_of, 0.0, 500.0, xtol=1e-12)


def test_rdp_gaussian_values():
    assert rdp_gaussian(1.0, 2) == 1.0
    assert rdp_gaussian(2.0, 4) == pytest.approx(rdp_gaussian(1.0, 4) / 4)
    assert rdp_gaussian(1e8, 2) < 1e-15
    with pytest.raises(ConfigError):
        rdp_gaussian(1.0, 1.0)


@pytest.mark.parametrize("sigma", [0.5, 1.0, 3.0])
@pytest.mark.parametrize("alpha", [2, 3, 10, 64, 512])
def test_subsampled_reduces_to_gaussian(sigma, alpha):
    assert rdp_subsampled_gaussian(1.0, sigma, alpha) == pytest.approx(rdp_gaussian(sigma, alpha), abs=1e-9)


def test_subsampled_p1_example():
    assert rdp_subsampled_gaussian(1.0, 2.0, 4) == 0.5


@pytest.mark.parametrize("p,sigma", [(0.01, 1.0), (0.05, 0.8), (0.3, 2.0), (0.9, 1.5)])
def test_order2_matches_quadrature(p, sigma):
    assert rdp_subsampled_gaussian(p, sigma, 2) == pytest.approx(order2_quadrature(p, sigma), abs=1e-6)


def test_monotone_in_p():
    for sigma in (0.7, 1.0, 4.0):
        for alpha in (2, 8, 32):
            vals = [rdp_subsampled_gaussian(p, sigma, alpha) for p in np.linspace(0.001, 1.0, 40)]
            assert np.all(np.diff(vals) > 0)


def test_fractional_order_below_two_clamped():
    assert rdp_subsampled_gaussian(0.1, 1.0, 1.5) == rdp_subsampled_gaussian(0.1, 1.0, 2)
    with pytest.raises(ConfigError):
        rdp_subsampled_gaussian(0.1, 1.0, 2.5)


def test_single_round_epsilon_upper_bound():
    eps = epsilon_for(1.0, 1e-5, 1, 1.0)
    assert 1 + math.log(1e5) == pytest.approx(12.5129, abs=1e-4)
    assert eps <= 1 + math.log(1e5)


def test_empty_ledger_raises():
    with pytest.raises(QueryError):
        compose_and_convert(PrivacyLedger(1e-5))


def test_epsilon_non_decreasing_in_rounds():
    eps = [epsilon_for(1.0, 1e-5, T, 0.05) for T in (1, 2, 5, 10, 100, 1000)]
    assert np.all(np.diff(eps) >= 0)


def test_epsilon_non_increasing_in_sigma():
    eps = [epsilon_for(s, 1e-5, 200, 0.05) for s in np.linspace(0.5, 5, 30)]
    assert np.all(np.diff(eps) <= 0)


def test_composition_linearity():
    a, b = PrivacyLedger(1e-5), PrivacyLedger(1e-5)
    for _ in range(37):
        a.record(0.04, 1.1)
    b.record(0.04, 1.1, rounds=37)
    assert a.epsilon() == b.epsilon()
    assert a.rounds == 37


def test_zero_noise_is_infinite():
    ledger = PrivacyLedger(1e-5)
    ledger.record(1.0, 0.0)
    assert ledger.epsilon() == math.inf


@pytest.mark.parametrize("sigma", [0.5, 1.0, 2.0, 5.0, 20.0])
@pytest.mark.parametrize("delta", [1e-2, 1e-5, 1e-8])
def test_never_tighter_than_exact_gaussian(sigma, delta):
    assert epsilon_for(sigma, delta, 1, 1.0) >= exact_gaussian_epsilon(sigma, delta) - 1e-9


def test_composed_never_tighter_than_exact_gaussian():
    # T full-participation rounds equal one Gaussian with sigma / sqrt(T)
    for T in (4, 25, 100):
        assert epsilon_for(3.0, 1e-5, T, 1.0) >= exact_gaussian_epsilon(3.0 / math.sqrt(T), 1e-5)


@pytest.mark.parametrize("eps,T,p", [(2.0, 100, 0.1), (4.0, 1000, 0.04), (8.0, 300, 0.06), (1.0, 10, 1.0)])
def test_calibration_round_trip(eps, T, p):
    res = calibrate_sigma(eps, 1e-5, T, p)
    assert 0.99 * eps <= res.achieved_epsilon <= eps
    assert epsilon_for(res.sigma, 1e-5, T, p) == res.achieved_epsilon
    assert res.iterations > 0


@pytest.mark.parametrize("eps,T,p", [(1.0, 1000, 0.04), (4.0, 100, 1.0), (0.5, 1000, 0.04)])
def test_calibration_sqrt_T_scaling(eps, T, p):
    s1 = calibrate_sigma(eps, 1e-5, T, p).sigma
    s4 = calibrate_sigma(eps, 1e-5, 4 * T, p).sigma
    assert 1.8 <= s4 / s1 <= 2.2


def test_calibration_monotone_in_target():
    sigmas = [calibrate_sigma(e, 1e-5, 100, 0.1).sigma for e in (1.0, 2.0, 4.0, 8.0)]
    assert np.all(np.diff(sigmas) < 0)


def test_calibration_unreachable():
    with pytest.raises(CalibrationError):
        calibrate_sigma(1e-6, 1e-5, 1000, 1.0)
    with pytest.raises(ConfigError):
        calibrate_sigma(0.0, 1e-5, 10, 1.0)


def test_order_grid():
    assert DEFAULT_ORDERS[0] == 2 and DEFAULT_ORDERS[-1] == 512
