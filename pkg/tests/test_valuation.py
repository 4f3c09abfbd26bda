import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvalm.market import DomainError, StatePoint
from mvalm.valuation import (
    cross_moment_SLq,
    mean_S,
    moment_coefficients,
    moment_Lq,
    second_moment_S,
    value,
    value_row,
    write_value_csv,
)
from oracles import moments_by_ode

REFERENCE = {
    0.0: (71.00961391, 584.0838316, 28.67994754, 5122.726002),
    5.0: (34.73428916, 175.7167196, 16.61880362, 1242.78008),
    8.0: (16.29591034, 61.2355664, 8.656185033, 279.8276176),
}


@pytest.mark.parametrize("t", sorted(REFERENCE))
def test_reference_moments(market, prefs, t):
    st_ = StatePoint(t, 5.0, 3.0)
    es, esl, eslm, es2 = REFERENCE[t]
    assert mean_S(market, prefs, st_) == pytest.approx(es, rel=1e-9)
    assert cross_moment_SLq(market, prefs, st_, 1.0) == pytest.approx(esl, rel=1e-9)
    assert cross_moment_SLq(market, prefs, st_, -0.5) == pytest.approx(eslm, rel=1e-9)
    assert second_moment_S(market, prefs, st_) == pytest.approx(es2, rel=1e-9)


@pytest.mark.parametrize("state", [StatePoint(0.0, 5.0, 3.0), StatePoint(3.3, -2.0, 0.7),
                                   StatePoint(6.9, 1.0, 12.0)])
def test_moments_match_ode_oracle_piecewise(pw_market, prefs, state):
    ref = moments_by_ode(pw_market, prefs, state)
    lam = prefs.lam
    assert moment_Lq(pw_market, state, 1.0) == pytest.approx(ref["L1"], rel=1e-10)
    assert moment_Lq(pw_market, state, -lam) == pytest.approx(ref["Lm"], rel=1e-10)
    assert mean_S(pw_market, prefs, state) == pytest.approx(ref["ES"], rel=1e-8)
    assert cross_moment_SLq(pw_market, prefs, state, 1.0) == pytest.approx(ref["ESL1"], rel=1e-8)
    assert cross_moment_SLq(pw_market, prefs, state, -lam) == pytest.approx(ref["ESLm"], rel=1e-8)
    assert second_moment_S(pw_market, prefs, state) == pytest.approx(ref["ES2"], rel=1e-8)


def test_lq_closed_form(market):
    st_ = StatePoint(2.0, 0.0, 3.0)
    for q in (-1.0, -0.5, 1.0, 2.0):
        rate = q * (0.1 - 0.5 * (1.0 - q) * 0.04)
        assert moment_Lq(market, st_, q) == pytest.approx(3.0 ** q * math.exp(rate * 8.0), rel=1e-14)


@given(t=st.floats(0.0, 10.0), mid=st.floats(0.0, 1.0), l=st.floats(0.1, 10.0))
def test_lq_tower_property(pw_market, t, mid, l):
    s1 = t + mid * (10.0 - t)
    q = -0.5
    direct = moment_Lq(pw_market, StatePoint(t, 0.0, l), q)
    # E[L(T)^q | L(s1)] is proportional to L(s1)^q, so the factor composes
    first = moment_Lq(pw_market, StatePoint(t, 0.0, l), q, s1)
    second = moment_Lq(pw_market, StatePoint(s1, 0.0, 1.0), q)
    assert direct == pytest.approx(first * second, rel=1e-12)


def test_terminal_degeneracy(pw_market, prefs):
    st_ = StatePoint(10.0, 4.0, 2.0)
    assert mean_S(pw_market, prefs, st_) == 4.0
    assert second_moment_S(pw_market, prefs, st_) == 16.0
    assert cross_moment_SLq(pw_market, prefs, st_, 1.0) == 8.0
    vb = value(pw_market, prefs, st_)
    assert vb.value == pytest.approx(-(2.0 ** -0.5 + 1.0) * 4.0, rel=1e-15)
    assert vb.variance_ST == 0.0


def test_q_zero_cross_moment_is_mean(pw_market, prefs):
    st_ = StatePoint(1.0, 2.0, 3.0)
    assert cross_moment_SLq(pw_market, prefs, st_, 0.0) == pytest.approx(mean_S(pw_market, prefs, st_), rel=1e-12)


def test_zero_excess_return_mean(market, prefs):
    flat = market.replace(mu=0.1)
    st_ = StatePoint(0.0, 5.0, 3.0)
    # eta = 0 here, so the liability feeds in only through the hedge gain times theta = 0
    assert mean_S(flat, prefs, st_) == pytest.approx(5.0 * math.e, rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(t=st.floats(0.0, 9.9), s=st.floats(-50.0, 50.0), l=st.floats(0.1, 20.0))
def test_variance_nonnegative_and_surplus_invariant(pw_market, prefs, t, s, l):
    a = value(pw_market, prefs, StatePoint(t, s, l))
    b = value(pw_market, prefs, StatePoint(t, 0.0, l))
    assert a.variance_ST >= -1e-9 * a.second_moment_ST
    assert a.variance_ST == pytest.approx(b.variance_ST, rel=1e-7, abs=1e-9)
    growth = math.exp(pw_market.r.integral(t, 10.0))
    assert a.mean_ST - b.mean_ST == pytest.approx(s * growth, rel=1e-9, abs=1e-9)


def test_value_decreases_in_weights(market, prefs):
    st_ = StatePoint(0.0, 5.0, 3.0)
    grid = np.linspace(0.1, 2.0, 20)
    v1 = [value(market, prefs.replace(omega1=w), st_).value for w in grid]
    v2 = [value(market, prefs.replace(omega2=w), st_).value for w in grid]
    assert np.all(np.diff(v1) < 0.0)
    assert np.all(np.diff(v2) < 0.0)


def test_coefficients_reassemble_mean(pw_market, prefs):
    st_ = StatePoint(2.0, 1.5, 2.5)
    c = moment_coefficients(pw_market, prefs, st_)
    es = (st_.s * math.exp(pw_market.r.integral(2.0, 10.0)) + c.sI * moment_Lq(pw_market, st_, 1.0)
          + c.sII * moment_Lq(pw_market, st_, -prefs.lam) + c.sIII)
    assert es == pytest.approx(mean_S(pw_market, prefs, st_), rel=1e-12)


def test_value_domain_errors(market, prefs):
    with pytest.raises(DomainError):
        value(market, prefs, StatePoint(11.0, 0.0, 1.0))
    with pytest.raises(DomainError):
        mean_S(market, prefs, StatePoint(0.0, 0.0, -1.0))


def test_value_csv(market, prefs, tmp_path):
    vb = value(market, prefs, StatePoint(0.0, 5.0, 3.0))
    path = tmp_path / "v.csv"
    write_value_csv(path, [value_row(prefs, vb)])
    header, row = path.read_text().splitlines()
    assert header == "t,s,l,omega1,omega2,mean_ST,var_ST,value"
    assert float(row.split(",")[-1]) == vb.value
