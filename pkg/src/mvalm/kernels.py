"""Deterministic kernels M1..M10 of the adjoint ansatz and the feedback gains.

Only M1, M2, M3, M7 and M10 carry information:

    M4 = -M1,  M5 = -M2,  M6 = -M3,  M8 = M9 = 0.

Every kernel is evaluated from its closed form.  The defining ODE system is
kept only as a residual check (:func:`ode_residuals`), and M1, M3 also have
a quadrature route (:func:`m1_quadrature`, :func:`m3_quadrature`).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO

import numpy as np

from ._csv import write_rows
from .market import CoefficientCurve, DomainError, MarketModel, RiskPreferences
from .numerics import (
    SIMPSON_PANELS,
    TimeGrid,
    central_difference,
    weighted_tail_integral,
    weighted_tail_integral_simpson,
)


class ConfigurationError(ValueError):
    pass


def _times(model: MarketModel, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    if np.any((t < 0.0) | (t > model.horizon)) or np.any(np.isnan(t)):
        raise DomainError(f"time outside [0, {model.horizon}]")
    return t


def _out(x: np.ndarray):
    return float(x) if np.ndim(x) == 0 else x


def _tail(curve: CoefficientCurve, t: np.ndarray, T: float) -> np.ndarray:
    return np.asarray(curve.integral(t, T))


def l_power_rate(model: MarketModel, q: float) -> CoefficientCurve:
    """Growth rate of ``E[L^q]``: ``q * (alpha - (1 - q) beta^2 / 2)``."""
    return q * (model.alpha - 0.5 * (1.0 - q) * model.beta ** 2)


def m1_exponent(model: MarketModel, prefs: RiskPreferences) -> CoefficientCurve:
    lam = prefs.lam
    return (lam * (model.alpha - 0.5 * (lam + 1.0) * model.beta ** 2)
            - lam * model.theta * model.rho * model.beta / model.sigma)


def hedge_rate(model: MarketModel) -> CoefficientCurve:
    """``eta + theta rho beta / sigma``; drives M3 and the comparison kernel b."""
    return model.eta + model.theta * model.rho * model.beta / model.sigma


def sharpe_squared(model: MarketModel) -> CoefficientCurve:
    return (model.theta / model.sigma) ** 2


def m2(model: MarketModel, t):
    t = _times(model, t)
    return _out(np.exp(2.0 * _tail(model.r, t, model.horizon)))


def m5(model: MarketModel, t):
    return -m2(model, t)


def m7(model: MarketModel, prefs: RiskPreferences, t):
    t = _times(model, t)
    return _out(-prefs.omega1 * np.exp(_tail(model.r, t, model.horizon)))


def m10(model: MarketModel, prefs: RiskPreferences, t):
    t = _times(model, t)
    return _out(-prefs.omega2 * np.exp(_tail(model.r, t, model.horizon)))


def m1(model: MarketModel, prefs: RiskPreferences, t):
    t = _times(model, t)
    T = model.horizon
    inner = weighted_tail_integral(m1_exponent(model, prefs), sharpe_squared(model), t, T)
    return _out(prefs.omega1 * np.exp(_tail(model.r, t, T)) * inner)


def m4(model: MarketModel, prefs: RiskPreferences, t):
    return -m1(model, prefs, t)


def m3(model: MarketModel, t):
    t = _times(model, t)
    T = model.horizon
    c = hedge_rate(model)
    return _out(np.exp(2.0 * _tail(model.r, t, T)) * weighted_tail_integral(c, c, t, T))


def m6(model: MarketModel, t):
    return -m3(model, t)


def m1_quadrature(model: MarketModel, prefs: RiskPreferences, t: float,
                  panels: int = SIMPSON_PANELS) -> float:
    """M1 by composite Simpson on both the inner and the outer integral."""
    t = float(_times(model, t))
    T = model.horizon
    inner = weighted_tail_integral_simpson(
        m1_exponent(model, prefs), sharpe_squared(model), t, T, model.breakpoints, panels)
    growth = weighted_tail_integral_simpson(
        lambda x: 0.0, model.r, t, T, model.breakpoints, panels)
    return prefs.omega1 * np.exp(growth) * inner


def m3_quadrature(model: MarketModel, t: float, panels: int = SIMPSON_PANELS) -> float:
    t = float(_times(model, t))
    T = model.horizon
    c = hedge_rate(model)
    inner = weighted_tail_integral_simpson(c, c, t, T, model.breakpoints, panels)
    growth = weighted_tail_integral_simpson(
        lambda x: 0.0, model.r, t, T, model.breakpoints, panels)
    return np.exp(2.0 * growth) * inner


@dataclass(frozen=True)
class KernelValues:
    t: float
    m1: float
    m2: float
    m3: float
    m4: float
    m5: float
    m6: float
    m7: float
    m8: float
    m9: float
    m10: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f"m{i}") for i in range(1, 11)])


@dataclass(frozen=True)
class GainValues:
    t: float
    f1: float
    f2: float
    f3: float
    f4: float


def kernel_values(model: MarketModel, prefs: RiskPreferences, t: float) -> KernelValues:
    k1, k2, k3 = m1(model, prefs, t), m2(model, t), m3(model, t)
    return KernelValues(
        t=float(t), m1=k1, m2=k2, m3=k3, m4=-k1, m5=-k2, m6=-k3,
        m7=m7(model, prefs, t), m8=0.0, m9=0.0, m10=m10(model, prefs, t),
    )


def gain_arrays(model: MarketModel, prefs: RiskPreferences, t, side: str = "right"):
    """Vectorised ``(f1, f3, f4)``; ``side`` picks the coefficient limit at breakpoints."""
    t = _times(model, t)
    theta = np.asarray(model.theta(t, side))
    sigma = np.asarray(model.sigma(t, side))
    rho_beta = np.asarray(model.rho(t, side)) * np.asarray(model.beta(t, side))
    k1 = np.asarray(m1(model, prefs, t))
    k2 = np.asarray(m2(model, t))
    k3 = np.asarray(m3(model, t))
    k7 = np.asarray(m7(model, prefs, t))
    k10 = np.asarray(m10(model, prefs, t))
    denom = sigma ** 2 * k2
    f1 = -(theta * k7 - prefs.lam * sigma * rho_beta * k1) / denom
    f3 = rho_beta / sigma * (1.0 - k3 / k2)
    f4 = -theta * k10 / denom
    return _out(f1), _out(f3), _out(f4)


def gains(model: MarketModel, prefs: RiskPreferences, t: float, side: str = "right") -> GainValues:
    f1, f3, f4 = gain_arrays(model, prefs, float(t), side)
    return GainValues(t=float(t), f1=f1, f2=0.0, f3=f3, f4=f4)


def ode_residuals(model: MarketModel, prefs: RiskPreferences, t: float, h: float) -> np.ndarray:
    """Left-hand sides of the ten kernel ODEs at ``t``, derivatives by central differences.

    Raises :class:`~mvalm.numerics.StencilError` when a coefficient breakpoint
    lies inside ``(t - h, t + h)``.
    """
    T = model.horizon
    if t - h < 0.0 or t + h > T:
        raise DomainError(f"stencil ({t - h}, {t + h}) leaves [0, {T}]")
    interior = [b for b in model.breakpoints if 0.0 < b < T]
    x = np.array([t - h, t, t + h])
    base = {1: m1(model, prefs, x), 2: m2(model, x), 3: m3(model, x),
            7: m7(model, prefs, x), 10: m10(model, prefs, x)}
    zero = np.zeros(3)
    stencil = {1: base[1], 2: base[2], 3: base[3], 4: -base[1], 5: -base[2], 6: -base[3],
               7: base[7], 8: zero, 9: zero, 10: base[10]}
    d = {i: central_difference(lambda y, v=v: v[0] if y < t else v[2], t, h, interior)
         for i, v in stencil.items()}
    K = KernelValues(float(t), *(float(stencil[i][1]) for i in range(1, 11)))
    r, alpha, beta = model.r(t), model.alpha(t), model.beta(t)
    th, sg, rho, et = model.theta(t), model.sigma(t), model.rho(t), model.eta(t)
    lam = prefs.lam
    decay = r - lam * (alpha - 0.5 * (lam + 1.0) * beta ** 2)
    low = th ** 2 * (K.m1 + K.m4 + K.m7) - lam * th * sg * rho * beta * K.m1
    mid = th ** 2 * (K.m2 + K.m5 + K.m8)
    high = th ** 2 * (K.m3 + K.m6 + K.m9) - th * sg * rho * beta * (K.m2 - K.m3)
    ratio = K.m5 / (K.m2 * sg ** 2)
    return np.array([
        d[1] + decay * K.m1 - low / sg ** 2,
        d[2] + 2.0 * r * K.m2 - mid / sg ** 2,
        d[3] + (r + alpha) * K.m3 + et * K.m2 - high / sg ** 2,
        d[4] + decay * K.m4 - ratio * low,
        d[5] + 2.0 * r * K.m5 - ratio * mid,
        d[6] + (r + alpha) * K.m6 + et * K.m5 - ratio * high,
        d[7] + r * K.m7,
        d[8] + r * K.m8,
        d[9] + r * K.m9,
        d[10] + r * K.m10 - th ** 2 * K.m10 / sg ** 2 - ratio * th ** 2 * K.m10,
    ])


@dataclass(frozen=True, eq=False)
class GainSchedule:
    grid: TimeGrid
    rows: tuple[tuple[KernelValues, GainValues], ...]

    COLUMNS = ("t",) + tuple(f"m{i}" for i in range(1, 11)) + ("f1", "f2", "f3", "f4")

    def __post_init__(self) -> None:
        if len(self.rows) != len(self.grid):
            raise ConfigurationError("schedule rows must align one-to-one with grid nodes")

    def table(self) -> list[list[float]]:
        out = []
        for k, g in self.rows:
            out.append([k.t, *k.as_array().tolist(), g.f1, g.f2, g.f3, g.f4])
        return out

    def write_csv(self, dest: str | Path | IO[str]) -> None:
        write_rows(dest, self.COLUMNS, self.table())


def build_schedule(model: MarketModel, prefs: RiskPreferences, grid: TimeGrid) -> GainSchedule:
    """Kernels and gains on every node of ``grid``; the grid must hold every breakpoint."""
    T = model.horizon
    if abs(grid.start) > 1e-12 or abs(grid.end - T) > 1e-12:
        raise ConfigurationError(f"grid must span [0, {T}], got [{grid.start}, {grid.end}]")
    if not grid.contains_all(model.breakpoints):
        raise ConfigurationError("grid is missing coefficient breakpoints")
    nodes = np.clip(grid.nodes, 0.0, T)
    k1, k2, k3 = m1(model, prefs, nodes), m2(model, nodes), m3(model, nodes)
    k7, k10 = m7(model, prefs, nodes), m10(model, prefs, nodes)
    f1, f3, f4 = gain_arrays(model, prefs, nodes)
    rows = []
    for i, t in enumerate(nodes):
        kv = KernelValues(float(t), k1[i], k2[i], k3[i], -k1[i], -k2[i], -k3[i],
                          k7[i], 0.0, 0.0, k10[i])
        rows.append((kv, GainValues(float(t), f1[i], 0.0, f3[i], f4[i])))
    return GainSchedule(grid, tuple(rows))
