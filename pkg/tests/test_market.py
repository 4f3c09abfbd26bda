import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mvalm.market import (
    CoefficientCurve,
    DomainError,
    MarketModel,
    RiskPreferences,
    StatePoint,
    merge_breakpoints,
    power,
    validate,
)

finite = st.floats(-5.0, 5.0, allow_nan=False)


def step_curve():
    return CoefficientCurve(np.array([0.0, 2.0, 5.0]), np.array([1.0, -3.0]))


def test_curve_is_right_continuous_with_left_limits():
    c = step_curve()
    assert c(2.0) == -3.0
    assert c(2.0, side="left") == 1.0
    assert c(5.0) == -3.0
    assert c(0.0, side="left") == 1.0


def test_curve_rejects_times_outside_horizon():
    with pytest.raises(DomainError):
        step_curve()(5.0 + 1e-9)
    with pytest.raises(DomainError):
        step_curve()(-1e-12)


@pytest.mark.parametrize("bps, vals", [
    ([0.0, 1.0, 1.0], [1.0, 2.0]),
    ([0.5, 1.0], [1.0]),
    ([0.0, 1.0], [1.0, 2.0]),
    ([0.0, 1.0], [math.inf]),
])
def test_curve_construction_errors(bps, vals):
    with pytest.raises(ValueError):
        CoefficientCurve(np.array(bps), np.array(vals))


def test_curve_arrays_are_read_only():
    c = step_curve()
    with pytest.raises(ValueError):
        c.values[0] = 2.0


def test_exact_integral():
    c = step_curve()
    assert c.integral(0.0, 5.0) == pytest.approx(2.0 - 9.0, abs=1e-15)
    assert c.integral(1.0, 3.0) == pytest.approx(1.0 - 3.0, abs=1e-15)
    assert c.cumulative(0.0) == 0.0


@given(a=st.floats(0.0, 5.0), b=st.floats(0.0, 5.0), m=st.floats(0.0, 5.0))
def test_integral_is_additive(a, b, m):
    c = step_curve()
    assert c.integral(a, b) == pytest.approx(c.integral(a, m) + c.integral(m, b), abs=1e-12)


@given(x=finite, y=finite, t=st.floats(0.0, 5.0))
def test_arithmetic_is_pointwise(x, y, t):
    a = CoefficientCurve(np.array([0.0, 1.5, 5.0]), np.array([x, y]))
    b = step_curve()
    assert (a + b)(t) == pytest.approx(a(t) + b(t))
    assert (a * b)(t) == pytest.approx(a(t) * b(t))
    assert (a - 2.0)(t) == pytest.approx(a(t) - 2.0)
    assert (-a)(t) == -a(t)


def test_merge_breakpoints_collapses_near_duplicates():
    out = merge_breakpoints([0.0, 1.0, 2.0], [1.0 + 1e-14, 1.5])
    np.testing.assert_array_equal(out, [0.0, 1.0, 1.5, 2.0])


def test_market_breakpoints_are_union(pw_market):
    np.testing.assert_array_equal(pw_market.breakpoints, [0.0, 3.0, 4.0, 5.0, 7.0, 10.0])


def test_market_rejects_mismatched_horizon():
    with pytest.raises(ValueError):
        MarketModel(10.0, step_curve(), 0.6, 0.3, 0.1, 0.2, 0.6)


def test_derived_curves(market):
    assert market.theta(3.0) == pytest.approx(0.5)
    assert market.eta(3.0) == pytest.approx(0.0)


def test_validate_accepts_reference_setup(market, prefs):
    assert validate(market, prefs) == []


def test_validate_reports_every_violation(market):
    bad = market.replace(sigma=CoefficientCurve(np.array([0.0, 4.0, 10.0]), np.array([0.3, 0.0])),
                         rho=1.2)
    found = validate(bad, RiskPreferences(0.0, 0.0, 0.5))
    names = {v.field for v in found}
    assert names == {"sigma", "rho", "omega1, omega2"}
    sigma = next(v for v in found if v.field == "sigma")
    assert sigma.intervals == ((4.0, 10.0),)
    assert "violated on [4, 10)" in str(sigma)


def test_negative_weight_is_a_violation(market):
    assert [v.field for v in validate(market, RiskPreferences(-1.0, 2.0, 0.5))] == ["omega1"]


def test_state_check(market):
    StatePoint(10.0, -3.0, 1.0).check(market)
    for bad in (StatePoint(10.5, 0.0, 1.0), StatePoint(0.0, 0.0, 0.0), StatePoint(0.0, math.nan, 1.0)):
        with pytest.raises(DomainError):
            bad.check(market)


@given(l=st.floats(1e-3, 1e3), q=st.floats(-3.0, 3.0))
def test_power_matches_pow(l, q):
    assert power(l, q) == pytest.approx(l ** q, rel=1e-12)


def test_tolerance(prefs):
    assert prefs.tolerance(4.0) == pytest.approx(1.5)
