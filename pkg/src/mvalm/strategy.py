"""Equilibrium investment rule and the constant-risk-aversion comparison rule."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Sequence

import numpy as np

from ._csv import write_rows
from .kernels import gain_arrays, gains, hedge_rate
from .market import DomainError, MarketModel, RiskPreferences, StatePoint, power
from .numerics import weighted_tail_integral


@dataclass(frozen=True)
class StrategyEvaluation:
    state: StatePoint
    u_star: float
    gain_breakdown: tuple[float, float, float]


@dataclass(frozen=True)
class ComparisonGain:
    t: float
    b: float
    u_hat_slope: float
    u_hat_intercept: float


def equilibrium_control(model: MarketModel, prefs: RiskPreferences,
                        state: StatePoint) -> StrategyEvaluation:
    """Dollar amount in the stock, ``f1 l^-lam + f3 l + f4``; the surplus is not used."""
    state.check(model)
    g = gains(model, prefs, state.t)
    parts = (g.f1 * power(state.l, -prefs.lam), g.f3 * state.l, g.f4)
    return StrategyEvaluation(state, parts[0] + parts[1] + parts[2], parts)


class EquilibriumStrategy:
    """Vectorised feedback rule ``u(t, s, l)`` for the simulator.

    ``f4_scale`` multiplies the f4 gain; values other than 1 give a
    deliberately wrong rule for negative-control runs.
    """

    def __init__(self, model: MarketModel, prefs: RiskPreferences, f4_scale: float = 1.0):
        self.model = model
        self.prefs = prefs
        self.f4_scale = float(f4_scale)
        self._table: dict[float, tuple[float, float, float]] = {}

    def prime(self, times) -> None:
        """Tabulate the gains on ``times`` in one vectorised pass."""
        t = np.unique(np.asarray(times, dtype=float))
        t = t[[x not in self._table for x in t]]
        if t.size:
            f1, f3, f4 = (np.atleast_1d(a) for a in gain_arrays(self.model, self.prefs, t))
            for i, x in enumerate(t):
                self._table[float(x)] = (float(f1[i]), float(f3[i]), self.f4_scale * float(f4[i]))

    def __call__(self, t: float, s: np.ndarray, l: np.ndarray) -> np.ndarray:
        t = float(t)
        if t not in self._table:
            self.prime([t])
        f1, f3, f4 = self._table[t]
        return f1 * np.exp(-self.prefs.lam * np.log(l)) + f3 * l + f4


def appendix_b(model: MarketModel, t):
    """Kernel ``b`` of the constant-risk-aversion comparison rule; ``b(T) = 0``."""
    t_arr = np.asarray(t, dtype=float)
    T = model.horizon
    if np.any((t_arr < 0.0) | (t_arr > T)):
        raise DomainError(f"time outside [0, {T}]")
    c = hedge_rate(model)
    out = np.exp(np.asarray(model.r.integral(t_arr, T))) * weighted_tail_integral(c, c, t_arr, T)
    return float(out) if out.ndim == 0 else out


def comparison_gain(model: MarketModel, prefs: RiskPreferences, t: float) -> ComparisonGain:
    if prefs.omega1 != 0.0:
        raise ValueError("the comparison rule requires omega1 = 0")
    if prefs.omega2 <= 0.0:
        raise ValueError("the comparison rule requires omega2 > 0")
    T = model.horizon
    gamma = 1.0 / prefs.omega2
    discount = np.exp(-model.r.integral(t, T))
    b = appendix_b(model, t)
    slope = model.beta(t) * model.rho(t) / model.sigma(t) * (1.0 - discount * b)
    intercept = model.theta(t) / (gamma * model.sigma(t) ** 2) * discount
    return ComparisonGain(float(t), b, slope, intercept)


def appendix_control(model: MarketModel, prefs: RiskPreferences, state: StatePoint) -> float:
    """Comparison rule ``u_hat = slope * l + intercept`` with risk aversion ``1 / omega2``."""
    state.check(model)
    g = comparison_gain(model, prefs, state.t)
    return g.u_hat_slope * state.l + g.u_hat_intercept


STRATEGY_COLUMNS = ("t", "l", "u_star", "addend_f1", "addend_f3", "addend_f4")


def strategy_curve(model: MarketModel, prefs: RiskPreferences, times: Sequence[float],
                   liabilities: Sequence[float]) -> list[list[float]]:
    rows = []
    for t in times:
        for l in liabilities:
            ev = equilibrium_control(model, prefs, StatePoint(float(t), 0.0, float(l)))
            rows.append([float(t), float(l), ev.u_star, *ev.gain_breakdown])
    return rows


def write_strategy_csv(dest: str | Path | IO[str], rows) -> None:
    write_rows(dest, STRATEGY_COLUMNS, rows)
