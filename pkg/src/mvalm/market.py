"""Market and liability coefficients, risk preferences and state points.

All coefficients are piecewise-constant, right-continuous curves on [0, T].
Curves support elementwise arithmetic, so derived quantities such as the
excess return ``mu - r`` are themselves exact curves on the union of the
input breakpoints.
"""

from __future__ import annotations

import math
import operator
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

ArrayLike = Union[float, Sequence[float], np.ndarray]

# Breakpoints closer than this are treated as the same time when curves are merged.
_MERGE_TOL = 1e-12


class DomainError(ValueError):
    """A time, state or argument lies outside the domain of an operation."""


@dataclass(frozen=True, eq=False)
class CoefficientCurve:
    """Piecewise-constant function of time.

    ``values[i]`` holds on ``[breakpoints[i], breakpoints[i+1])``; the last
    interval is closed on the right so that the curve is defined at T.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.breakpoints, dtype=float).copy()
        v = np.asarray(self.values, dtype=float).copy()
        if b.ndim != 1 or v.ndim != 1:
            raise ValueError("breakpoints and values must be one-dimensional")
        if b.size < 2:
            raise ValueError("a curve needs at least two breakpoints")
        if v.size != b.size - 1:
            raise ValueError(
                f"expected {b.size - 1} values for {b.size} breakpoints, got {v.size}"
            )
        if np.any(np.diff(b) <= 0.0):
            raise ValueError("breakpoints must be strictly increasing")
        if b[0] != 0.0:
            raise ValueError("breakpoints must start at 0")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve values must be finite")
        b.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value: float, horizon: float) -> "CoefficientCurve":
        return cls(np.array([0.0, float(horizon)]), np.array([float(value)]))

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.breakpoints)

    def interval_index(self, t: ArrayLike, side: str = "right") -> np.ndarray:
        """Index of the interval used to evaluate at ``t``.

        ``side="right"`` gives the right-continuous value (the interval that
        starts at a breakpoint); ``side="left"`` gives the left limit.
        """
        t = np.asarray(t, dtype=float)
        if side == "right":
            idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        elif side == "left":
            idx = np.searchsorted(self.breakpoints, t, side="left") - 1
        else:
            raise ValueError(f"side must be 'left' or 'right', got {side!r}")
        return np.clip(idx, 0, self.values.size - 1)

    def __call__(self, t: ArrayLike, side: str = "right"):
        t_arr = np.asarray(t, dtype=float)
        _check_times(t_arr, self.horizon)
        out = self.values[self.interval_index(t_arr, side)]
        return float(out) if out.ndim == 0 else out

    def cumulative(self, t: ArrayLike):
        """Exact integral of the curve from 0 to ``t``."""
        t_arr = np.asarray(t, dtype=float)
        _check_times(t_arr, self.horizon)
        starts = np.concatenate(([0.0], np.cumsum(self.values * self.widths)))
        idx = self.interval_index(t_arr)
        out = starts[idx] + self.values[idx] * (t_arr - self.breakpoints[idx])
        return float(out) if out.ndim == 0 else out

    def integral(self, a: ArrayLike, b: ArrayLike):
        """Exact integral over ``[a, b]``; negative when ``a > b``."""
        out = np.asarray(self.cumulative(b)) - np.asarray(self.cumulative(a))
        return float(out) if out.ndim == 0 else out

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def violations(self, predicate: Callable[[np.ndarray], np.ndarray]) -> list[tuple[float, float]]:
        """Intervals ``(start, end)`` on which ``predicate(value)`` is false."""
        ok = np.asarray(predicate(self.values), dtype=bool)
        return [
            (float(self.breakpoints[i]), float(self.breakpoints[i + 1]))
            for i in np.flatnonzero(~ok)
        ]

    # -- arithmetic ---------------------------------------------------------

    def _combine(self, other, op) -> "CoefficientCurve":
        if isinstance(other, CoefficientCurve):
            if not math.isclose(other.horizon, self.horizon, rel_tol=0.0, abs_tol=_MERGE_TOL):
                raise ValueError("cannot combine curves with different horizons")
            bps = merge_breakpoints(self.breakpoints, other.breakpoints)
            mids = 0.5 * (bps[:-1] + bps[1:])
            return CoefficientCurve(bps, op(self(mids), other(mids)))
        if np.ndim(other) != 0:
            return NotImplemented
        return CoefficientCurve(self.breakpoints, op(self.values, float(other)))

    def __add__(self, other):
        return self._combine(other, operator.add)

    def __radd__(self, other):
        return self._combine(other, lambda a, b: b + a)

    def __sub__(self, other):
        return self._combine(other, operator.sub)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._combine(other, operator.mul)

    def __rmul__(self, other):
        return self._combine(other, lambda a, b: b * a)

    def __truediv__(self, other):
        return self._combine(other, operator.truediv)

    def __rtruediv__(self, other):
        return self._combine(other, lambda a, b: b / a)

    def __neg__(self):
        return CoefficientCurve(self.breakpoints, -self.values)

    def __pow__(self, exponent: float):
        return CoefficientCurve(self.breakpoints, self.values ** float(exponent))

    def simplify(self) -> "CoefficientCurve":
        """Drop breakpoints between intervals carrying identical values."""
        keep = np.concatenate(([True], self.values[1:] != self.values[:-1]))
        bps = np.concatenate((self.breakpoints[:-1][keep], self.breakpoints[-1:]))
        return CoefficientCurve(bps, self.values[keep])

    def __repr__(self) -> str:
        if self.values.size == 1:
            return f"CoefficientCurve.constant({self.values[0]!r}, {self.horizon!r})"
        return f"CoefficientCurve({self.breakpoints.tolist()!r}, {self.values.tolist()!r})"


def merge_breakpoints(*arrays: Sequence[float]) -> np.ndarray:
    """Sorted union of breakpoint arrays with near-duplicates collapsed."""
    merged = np.unique(np.concatenate([np.asarray(a, dtype=float) for a in arrays]))
    keep = np.concatenate(([True], np.diff(merged) > _MERGE_TOL))
    return merged[keep]


def _check_times(t: np.ndarray, horizon: float) -> None:
    if t.size and (np.any(t < 0.0) or np.any(t > horizon) or np.any(np.isnan(t))):
        bad = t[(t < 0.0) | (t > horizon) | np.isnan(t)].ravel()[0]
        raise DomainError(f"time {bad!r} outside [0, {horizon!r}]")


def as_curve(spec, horizon: float) -> CoefficientCurve:
    """Coerce a scalar or an existing curve into a ``CoefficientCurve``."""
    if isinstance(spec, CoefficientCurve):
        return spec
    return CoefficientCurve.constant(float(spec), horizon)


@dataclass(frozen=True, eq=False)
class MarketModel:
    """Deterministic bond, stock and liability coefficients on ``[0, horizon]``."""

    horizon: float
    r: CoefficientCurve
    mu: CoefficientCurve
    sigma: CoefficientCurve
    alpha: CoefficientCurve
    beta: CoefficientCurve
    rho: CoefficientCurve
    breakpoints: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        T = float(self.horizon)
        if not (T > 0.0 and math.isfinite(T)):
            raise ValueError(f"horizon must be positive and finite, got {self.horizon!r}")
        object.__setattr__(self, "horizon", T)
        for name in ("r", "mu", "sigma", "alpha", "beta", "rho"):
            curve = as_curve(getattr(self, name), T)
            if not math.isclose(curve.horizon, T, rel_tol=0.0, abs_tol=_MERGE_TOL):
                raise ValueError(f"{name} ends at {curve.horizon}, expected horizon {T}")
            object.__setattr__(self, name, curve)
        bps = merge_breakpoints(*(getattr(self, n).breakpoints for n in
                                  ("r", "mu", "sigma", "alpha", "beta", "rho")))
        bps.flags.writeable = False
        object.__setattr__(self, "breakpoints", bps)

    @classmethod
    def constant(cls, horizon: float, r: float, mu: float, sigma: float,
                 alpha: float, beta: float, rho: float) -> "MarketModel":
        return cls(horizon, r, mu, sigma, alpha, beta, rho)

    @property
    def theta(self) -> CoefficientCurve:
        """Excess return of the stock, ``mu - r``."""
        return (self.mu - self.r).simplify()

    @property
    def eta(self) -> CoefficientCurve:
        """Bond rate minus liability drift, ``r - alpha``."""
        return (self.r - self.alpha).simplify()

    def replace(self, **changes) -> "MarketModel":
        fields = {n: getattr(self, n) for n in ("horizon", "r", "mu", "sigma", "alpha", "beta", "rho")}
        fields.update(changes)
        return MarketModel(**fields)


def theta(model: MarketModel, t: ArrayLike, side: str = "right"):
    """Excess stock return ``mu(t) - r(t)``."""
    return model.theta(t, side)


def eta(model: MarketModel, t: ArrayLike, side: str = "right"):
    """``r(t) - alpha(t)``."""
    return model.eta(t, side)


@dataclass(frozen=True)
class RiskPreferences:
    """Weights of the liability-dependent risk tolerance ``omega1 * L**-lam + omega2``."""

    omega1: float
    omega2: float
    lam: float

    def tolerance(self, l: ArrayLike):
        """Reciprocal risk aversion ``omega1 * l**-lam + omega2`` at liability ``l``."""
        return self.omega1 * power(l, -self.lam) + self.omega2

    def replace(self, **changes) -> "RiskPreferences":
        return RiskPreferences(**{**self.__dict__, **changes})


@dataclass(frozen=True)
class StatePoint:
    t: float
    s: float
    l: float

    def check(self, model: MarketModel) -> None:
        if not (0.0 <= self.t <= model.horizon):
            raise DomainError(f"state time {self.t!r} outside [0, {model.horizon!r}]")
        if not (self.l > 0.0 and math.isfinite(self.l)):
            raise DomainError(f"liability must be positive, got {self.l!r}")
        if not math.isfinite(self.s):
            raise DomainError(f"surplus must be finite, got {self.s!r}")


def power(l: ArrayLike, q: float):
    """``l**q`` evaluated as ``exp(q * log(l))`` for positive ``l``."""
    out = np.exp(q * np.log(np.asarray(l, dtype=float)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Violation:
    field: str
    constraint: str
    intervals: tuple[tuple[float, float], ...] = ()

    def __str__(self) -> str:
        where = ", ".join(f"[{a:g}, {b:g})" for a, b in self.intervals)
        return f"{self.field}: {self.constraint}" + (f" violated on {where}" if where else "")


def validate(model: MarketModel, prefs: RiskPreferences) -> list[Violation]:
    """Check every model and preference invariant; an empty list means ok."""
    found: list[Violation] = []

    def curve_rule(name: str, constraint: str, predicate) -> None:
        bad = getattr(model, name).violations(predicate)
        if bad:
            found.append(Violation(name, constraint, tuple(bad)))

    curve_rule("sigma", "sigma(t) > 0", lambda v: v > 0.0)
    curve_rule("beta", "beta(t) >= 0", lambda v: v >= 0.0)
    curve_rule("rho", "rho(t) in [0, 1]", lambda v: (v >= 0.0) & (v <= 1.0))
    for name, value in (("omega1", prefs.omega1), ("omega2", prefs.omega2), ("lambda", prefs.lam)):
        if not (math.isfinite(value) and value >= 0.0):
            found.append(Violation(name, f"{name} >= 0"))
    if prefs.omega1 + prefs.omega2 <= 0.0:
        found.append(Violation("omega1, omega2", "omega1 + omega2 > 0"))
    return found


def reference_market() -> MarketModel:
    """The constant-coefficient market used in the numerical illustrations."""
    return MarketModel.constant(horizon=10.0, r=0.1, mu=0.6, sigma=0.3,
                                alpha=0.1, beta=0.2, rho=0.6)


def reference_preferences(omega1: float = 1.0, omega2: float = 1.0) -> RiskPreferences:
    return RiskPreferences(omega1=omega1, omega2=omega2, lam=0.5)
