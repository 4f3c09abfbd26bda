import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvalm.kernels import m2, m3
from mvalm.market import StatePoint
from mvalm.strategy import (
    EquilibriumStrategy,
    appendix_b,
    appendix_control,
    comparison_gain,
    equilibrium_control,
    strategy_curve,
    write_strategy_csv,
)


def test_reference_control(market, prefs):
    ev = equilibrium_control(market, prefs, StatePoint(0.0, 5.0, 3.0))
    assert ev.u_star == pytest.approx(5.048172784489733, rel=1e-13)
    assert ev.gain_breakdown[0] == pytest.approx(4.922481071014603 / math.sqrt(3.0), rel=1e-13)
    for t, u in ((5.0, 6.905920644341947), (8.0, 8.539852133661071)):
        assert equilibrium_control(market, prefs, StatePoint(t, 5.0, 3.0)).u_star == pytest.approx(u, rel=1e-13)


@given(s=st.floats(-1e6, 1e6), t=st.floats(0.0, 10.0), l=st.floats(0.01, 100.0))
def test_control_ignores_surplus(market, prefs, s, t, l):
    a = equilibrium_control(market, prefs, StatePoint(t, s, l)).u_star
    b = equilibrium_control(market, prefs, StatePoint(t, 0.0, l)).u_star
    assert a == b


def test_vectorised_rule_matches_pointwise(pw_market, prefs):
    rule = EquilibriumStrategy(pw_market, prefs)
    l = np.array([0.5, 3.0, 10.0])
    u = rule(4.0, np.zeros(3), l)
    for li, ui in zip(l, u):
        assert ui == pytest.approx(equilibrium_control(pw_market, prefs, StatePoint(4.0, 0.0, li)).u_star,
                                   rel=1e-14)


def test_f4_scale_only_moves_intercept(market, prefs):
    good = EquilibriumStrategy(market, prefs)(1.0, np.zeros(1), np.ones(1))
    bad = EquilibriumStrategy(market, prefs, f4_scale=2.0)(1.0, np.zeros(1), np.ones(1))
    f4 = equilibrium_control(market, prefs, StatePoint(1.0, 0.0, 1.0)).gain_breakdown[2]
    assert bad[0] - good[0] == pytest.approx(f4, rel=1e-12)


def test_reference_b(market):
    assert appendix_b(market, 0.0) == pytest.approx(math.e * (1.0 - math.exp(-2.0)), rel=1e-14)
    assert appendix_b(market, 10.0) == 0.0


@pytest.mark.parametrize("t", [0.0, 3.0, 6.5, 10.0])
def test_b_identity(pw_market, t):
    lhs = math.exp(-pw_market.r.integral(t, 10.0)) * appendix_b(pw_market, t)
    assert lhs == pytest.approx(m3(pw_market, t) / m2(pw_market, t), rel=1e-13, abs=1e-15)


@settings(max_examples=40, deadline=None)
@given(t=st.floats(0.0, 10.0), l=st.floats(0.05, 50.0), w2=st.floats(0.1, 5.0))
def test_comparison_rule_equals_equilibrium_without_liability_term(pw_market, prefs, t, l, w2):
    p = prefs.replace(omega1=0.0, omega2=w2)
    st_ = StatePoint(t, 1.0, l)
    u = equilibrium_control(pw_market, p, st_).u_star
    assert abs(u - appendix_control(pw_market, p, st_)) <= 1e-10 * (1.0 + abs(u))


def test_comparison_rule_preconditions(market, prefs):
    with pytest.raises(ValueError):
        comparison_gain(market, prefs, 0.0)
    with pytest.raises(ValueError):
        comparison_gain(market, prefs.replace(omega1=0.0, omega2=0.0), 0.0)


def test_strategy_csv(market, prefs, tmp_path):
    rows = strategy_curve(market, prefs, [0.0, 5.0], [1.0, 3.0])
    path = tmp_path / "s.csv"
    write_strategy_csv(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,l,u_star,addend_f1,addend_f3,addend_f4"
    assert len(lines) == 5
    t, l, u, a1, a3, a4 = map(float, lines[2].split(","))
    assert u == pytest.approx(a1 + a3 + a4, rel=1e-15)
    assert u == 5.048172784489733
