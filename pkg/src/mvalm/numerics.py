"""Integration utilities for piecewise-constant coefficients.

Two independent evaluation paths are kept on purpose: exact per-interval
closed forms for curves, and composite Simpson on aligned panels for
arbitrary callables.  The second one exists to cross-check the first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .market import CoefficientCurve, DomainError, merge_breakpoints

# |c| * width below this switches the tail integral to its linear limit.
EPS_EXPONENT = 1e-12
SIMPSON_PANELS = 2048


class StencilError(DomainError):
    """A finite-difference stencil straddles a coefficient breakpoint."""


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self) -> None:
        n = np.asarray(self.nodes, dtype=float).copy()
        if n.ndim != 1 or n.size < 2:
            raise ValueError("a time grid needs at least two nodes")
        if np.any(np.diff(n) <= 0.0):
            raise ValueError("grid nodes must be strictly increasing")
        n.flags.writeable = False
        object.__setattr__(self, "nodes", n)

    @classmethod
    def uniform(cls, a: float, b: float, count: int,
                breakpoints: Sequence[float] = ()) -> "TimeGrid":
        """``count`` equally spaced nodes on [a, b] plus any breakpoints inside."""
        if count < 2:
            raise ValueError("count must be at least 2")
        base = np.linspace(a, b, count)
        extra = [x for x in breakpoints if a < x < b]
        return cls(merge_breakpoints(base, extra))

    @property
    def start(self) -> float:
        return float(self.nodes[0])

    @property
    def end(self) -> float:
        return float(self.nodes[-1])

    def __len__(self) -> int:
        return self.nodes.size

    def contains_all(self, breakpoints: Sequence[float], tol: float = 1e-12) -> bool:
        inside = [x for x in breakpoints if self.start <= x <= self.end]
        return all(np.min(np.abs(self.nodes - x)) <= tol for x in inside)


def simpson_panels(a: float, b: float, panels: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and composite-Simpson weights on [a, b] with an even panel count."""
    if panels < 2 or panels % 2:
        raise ValueError("Simpson needs an even number of panels >= 2")
    x = np.linspace(a, b, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (3.0 * panels)


def _segments(a: float, b: float, breakpoints: Sequence[float]) -> list[tuple[float, float]]:
    cuts = [a] + [x for x in breakpoints if a < x < b] + [b]
    return list(zip(cuts[:-1], cuts[1:]))


def simpson(f: Callable, a: float, b: float, breakpoints: Sequence[float] = (),
            panels: int = SIMPSON_PANELS) -> float:
    """Composite Simpson on every segment between consecutive breakpoints.

    Curves are sampled from inside each segment: the right end of a segment
    takes the left limit.
    """
    total = 0.0
    for lo, hi in _segments(a, b, breakpoints):
        x, w = simpson_panels(lo, hi, panels)
        y = np.empty_like(x)
        y[:-1] = _sample(f, x[:-1], "right")
        y[-1] = _sample(f, x[-1:], "left")[0]
        total += float(w @ y)
    return total


def _sample(f: Callable, x: np.ndarray, side: str) -> np.ndarray:
    if isinstance(f, CoefficientCurve):
        return np.asarray(f(x, side), dtype=float)
    return np.asarray(f(x), dtype=float) * np.ones_like(x)


def integrate(f, a: float, b: float, grid: TimeGrid | None = None,
              panels: int = SIMPSON_PANELS) -> float:
    """Integral of ``f`` over [a, b].

    Curves are integrated exactly.  Other callables use composite Simpson on
    every sub-panel of ``grid``, each refined to ``panels`` panels.
    """
    if a > b:
        raise DomainError(f"lower limit {a!r} exceeds upper limit {b!r}")
    if grid is not None and (a < grid.start - 1e-12 or b > grid.end + 1e-12):
        raise DomainError(f"[{a}, {b}] not inside grid span [{grid.start}, {grid.end}]")
    if isinstance(f, CoefficientCurve):
        return float(f.integral(a, b))
    if a == b:
        return 0.0
    cuts = grid.nodes if grid is not None else ()
    return simpson(f, a, b, cuts, panels=panels)


def exp_integral(c: CoefficientCurve, a: float, b: float) -> float:
    """``exp`` of the integral of ``c`` over [a, b]."""
    return math.exp(integrate(c, a, b))


def _phi(c: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``(1 - exp(-c w)) / c`` with the limit ``w`` for vanishing exponent."""
    cw = c * w
    small = np.abs(cw) < EPS_EXPONENT
    safe_c = np.where(small, 1.0, c)
    return np.where(small, w, -np.expm1(-cw) / safe_c)


def weighted_tail_integral(c: CoefficientCurve, g: CoefficientCurve, s, T: float):
    """``int_s^T exp(int_z^s c(y) dy) g(z) dz`` for piecewise-constant c and g.

    Vectorised over ``s``.  Each coefficient interval contributes
    ``g_k * exp(-int_s^{z_k} c) * (1 - exp(-c_k w_k)) / c_k`` where ``z_k``
    is the interval start clipped to ``s`` and ``w_k`` its clipped width.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr > T):
        raise DomainError(f"lower limit exceeds upper limit {T!r}")
    bps = merge_breakpoints(c.breakpoints, g.breakpoints)
    bps = bps[bps <= T]
    if bps[-1] < T:
        bps = np.append(bps, T)
    lo, hi = bps[:-1], bps[1:]
    mids = 0.5 * (lo + hi)
    ck, gk = c(mids), g(mids)
    out = np.zeros_like(s_arr)
    C_s = np.asarray(c.cumulative(s_arr))
    for k in range(lo.size):
        if gk[k] == 0.0:
            continue
        start = np.maximum(lo[k], s_arr)
        width = np.clip(hi[k] - start, 0.0, None)
        active = width > 0.0
        if not np.any(active):
            continue
        decay = np.exp(-(np.asarray(c.cumulative(np.where(active, start, s_arr))) - C_s))
        out = out + np.where(active, gk[k] * decay * _phi(np.full_like(width, ck[k]), width), 0.0)
    return float(out) if out.ndim == 0 else out


def weighted_tail_integral_simpson(c: Callable, g: Callable, s: float, T: float,
                                   breakpoints: Sequence[float] = (),
                                   panels: int = SIMPSON_PANELS) -> float:
    """Quadrature oracle for :func:`weighted_tail_integral`.

    The inner integral ``int_s^z c`` is accumulated with the same Simpson
    panels (panel-pair cumulative sums), the outer one with composite Simpson.
    """
    if s > T:
        raise DomainError(f"lower limit {s!r} exceeds upper limit {T!r}")
    if s == T:
        return 0.0
    total = 0.0
    inner = 0.0
    for lo, hi in _segments(s, T, breakpoints):
        x, w = simpson_panels(lo, hi, panels)
        cx = np.empty_like(x)
        cx[:-1] = _sample(c, x[:-1], "right")
        cx[-1] = _sample(c, x[-1:], "left")[0]
        gx = np.empty_like(x)
        gx[:-1] = _sample(g, x[:-1], "right")
        gx[-1] = _sample(g, x[-1:], "left")[0]
        # cumulative inner integral at every node via Simpson on panel pairs,
        # with the odd nodes filled by the matching half-pair rule.
        h = (hi - lo) / panels
        cum = np.zeros_like(x)
        pair = h / 3.0 * (cx[0:-2:2] + 4.0 * cx[1:-1:2] + cx[2::2])
        cum[2::2] = np.cumsum(pair)
        half = h / 12.0 * (5.0 * cx[0:-2:2] + 8.0 * cx[1:-1:2] - cx[2::2])
        cum[1::2] = cum[0:-2:2] + half
        total += float(w @ (np.exp(-(inner + cum)) * gx))
        inner += cum[-1]
    return total


def central_difference(F: Callable[[float], float], t: float, h: float,
                       breakpoints: Sequence[float] = ()) -> float:
    """Symmetric difference quotient ``(F(t+h) - F(t-h)) / 2h``."""
    if h <= 0.0:
        raise ValueError("step must be positive")
    for x in breakpoints:
        if t - h < x < t + h:
            raise StencilError(f"breakpoint {x!r} inside stencil ({t - h!r}, {t + h!r})")
    return (F(t + h) - F(t - h)) / (2.0 * h)
