import math

import numpy as np
import pytest

from nhim.errors import RateFitError
from nhim.rates import RateEstimate, check_gap, default_base_points, estimate_rates
from nhim.vf_model import parse_system

WINDOW = 10.0


@pytest.fixture(scope="module")
def linear_rates():
    return estimate_rates(parse_system("dx=1 dy=1 vx1=1 A11=-1 f1=0.1*cos(x1)"), window=WINDOW)


def test_linear_example(linear_rates):
    r = linear_rates
    assert abs(r.rho_M) <= 1e-6
    assert r.rho_minus == pytest.approx(-1.0, abs=1e-3)
    assert 1 <= r.C_M <= 1.05
    assert 1 <= r.C_minus <= 1.05
    assert r.rho_plus == math.inf
    assert r.n_points == 32 and r.window == WINDOW


def test_slowest_stable_direction_dominates():
    r = estimate_rates(parse_system("dx=1 dy=2 vx1=1 A11=-1 A22=-3 f1=0 f2=0"), window=WINDOW)
    assert r.rho_minus == pytest.approx(-1.0, abs=1e-3)


def test_oscillating_rate_averages():
    r = estimate_rates(parse_system("dx=1 dy=1 vx1=1 A11=-2-cos(x1) f1=0"), window=20.0)
    assert r.rho_minus == pytest.approx(-2.0, abs=0.05)
    # worst case of exp(sin(x0) - sin(x0 + t)) is e^2
    assert r.C_minus <= math.exp(2.0) * 1.001


def test_envelopes_dominate_samples(linear_rates):
    for r in (linear_rates,
              estimate_rates(parse_system("dx=1 dy=1 vx1=1+0.3*sin(x1) A11=-2-cos(x1) f1=0"),
                             window=WINDOW)):
        t = r.times[:, None]
        assert np.all(r.tangential_log <= math.log(r.C_M) + r.rho_M * t + 1e-12)
        assert np.all(r.tangential_log_backward <= math.log(r.C_M) + r.rho_M * t + 1e-12)
        assert np.all(r.normal_log <= math.log(r.C_minus) + r.rho_minus * t + 1e-12)


def test_time_scaling(linear_rates):
    fast = estimate_rates(parse_system("dx=1 dy=1 vx1=2 A11=-2 f1=0.2*cos(x1)"), window=WINDOW)
    assert fast.rho_minus == pytest.approx(2 * linear_rates.rho_minus, rel=1e-6)
    assert fast.rho_M == pytest.approx(2 * linear_rates.rho_M, abs=1e-9)
    assert check_gap(fast).r_max == check_gap(linear_rates).r_max


def test_tangential_growth_is_measured():
    # x' = 1 + 0.5 sin x: tangential stretching is bounded, so rho_M stays near 0
    r = estimate_rates(parse_system("dx=1 dy=1 vx1=1+0.5*sin(x1) A11=-3 f1=0"), window=WINDOW)
    assert 0 <= r.rho_M < 0.05
    assert r.C_M > 1.5  # max of v(x)/v(x0) is 1.5/0.5 = 3
    assert r.rho_minus == pytest.approx(-3.0, abs=1e-3)


def test_ordering_violation_raises():
    with pytest.raises(RateFitError, match="rho_minus"):
        estimate_rates(parse_system("dx=1 dy=1 vx1=1 A11=0.2 f1=0"), window=5.0)


def test_non_exponential_growth_flagged():
    # log|Psi| = -t + 4 (sin(x0 + t) - sin(x0)) swings by up to 8
    with pytest.raises(RateFitError, match="not exponential"):
        estimate_rates(parse_system("dx=1 dy=1 vx1=1 A11=-1+4*cos(x1) f1=0"), window=WINDOW)


def test_default_base_points_cover_box():
    spec = parse_system("dx=2 dy=1 period_2=3 vx1=1 vx2=1 A11=-1 f1=0")
    p = default_base_points(spec)
    assert p.shape == (32, 2)
    assert p[:, 0].min() >= 0 and p[:, 0].max() < 2 * math.pi
    assert p[:, 1].max() < 3 and len(np.unique(p[:, 1])) == 32


# ------------------------------------------------------------------ gap

def test_gap_zero_tangential_rate():
    g = check_gap(RateEstimate(rho_M=0.0, rho_minus=-1.0), 5)
    assert g.passed and g[5.0].margin == 1.0 and g.r_max == math.inf


def test_gap_margin_and_failure():
    rates = RateEstimate(rho_M=0.2, rho_minus=-1.0)
    g = check_gap(rates, [4, 6])
    assert g[4.0].margin == pytest.approx(0.2, abs=1e-15) and g[4.0].passed
    assert not g[6.0].passed and not g.passed
    assert check_gap(rates).r_max == pytest.approx(5.0, rel=1e-15)


def test_gap_margin_decreases_in_r():
    g = check_gap(RateEstimate(rho_M=0.1, rho_minus=-1.0), [1, 2, 5, 9.9, 10, 11])
    margins = [c.margin for c in g.checks]
    assert all(b < a for a, b in zip(margins, margins[1:]))
    with pytest.raises(ValueError):
        check_gap(RateEstimate(rho_M=0.1, rho_minus=-1.0), 0.5)
