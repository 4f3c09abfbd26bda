"""Conditional moments of the terminal surplus and the equilibrium value function.

Under the equilibrium rule the surplus drift and diffusion are linear in
``L``, ``L^-lam`` and 1, so ``E_t[S(T)]``, ``E_t[S(T) L^q(T)]`` and
``E_t[S^2(T)]`` reduce to exponentially weighted integrals of the gains.

Evaluation layout: ``[t, T]`` is cut at every coefficient breakpoint and
each segment is split into an even number of equal panels.  Single
integrals (the S~ and SL~ families) are accumulated panel by panel with
Simpson's rule on the panel midpoint, so they are known at every node.  The
double integrals of the second moment then use composite Simpson over the
node values.  Coefficients are constant inside a panel, and each panel
samples its own left and right limits.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np

from ._csv import write_rows
from .kernels import gain_arrays
from .market import MarketModel, RiskPreferences, StatePoint, power

OUTER_PANELS = 512


@dataclass(frozen=True)
class MomentCoefficients:
    t: float
    horizon: float
    sI: float
    sII: float
    sIII: float
    slI: Callable[[float], float]
    slII: Callable[[float], float]
    slIII: Callable[[float], float]
    s2I: float
    s2II: float
    s2III: float
    s2IV: float
    s2V: float
    s2VI: float


@dataclass(frozen=True)
class ValueBreakdown:
    state: StatePoint
    mean_ST: float
    second_moment_ST: float
    variance_ST: float
    value: float


class _Panels:
    """Panel layout on ``[t, T]`` with per-panel coefficient values."""

    def __init__(self, model: MarketModel, t: float, panels: int):
        if panels < 2 or panels % 2:
            raise ValueError("panels per segment must be even and >= 2")
        T = model.horizon
        cuts = [t] + [b for b in model.breakpoints if t < b < T] + [T]
        nodes = [np.array([t])]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            nodes.append(np.linspace(lo, hi, panels + 1)[1:])
        self.nodes = np.concatenate(nodes)
        self.left = self.nodes[:-1]
        self.right = self.nodes[1:]
        self.mid = 0.5 * (self.left + self.right)
        self.width = self.right - self.left
        self.t = t
        self.model = model
        c = {}
        for name in ("r", "mu", "sigma", "alpha", "beta", "rho"):
            c[name] = np.asarray(getattr(model, name)(self.mid))
        c["theta"] = c["mu"] - c["r"]
        c["eta"] = c["r"] - c["alpha"]
        self.coef = c

    def __len__(self) -> int:
        return self.width.size

    def rate(self, fn: Callable[[dict], np.ndarray]) -> np.ndarray:
        """Per-panel constant value of a rate built from the coefficients."""
        return np.asarray(fn(self.coef), dtype=float) * np.ones(len(self))

    def cumulative(self, rate: np.ndarray) -> np.ndarray:
        """Exact ``int_t^v rate`` at every node."""
        return np.concatenate(([0.0], np.cumsum(rate * self.width)))

    def inner(self, integrand: dict[str, np.ndarray], rate: np.ndarray) -> np.ndarray:
        """``int_t^v g(w) exp(int_w^v c) dw`` at every node ``v``.

        ``integrand`` holds ``g`` sampled at the panel ``left``, ``mid`` and
        ``right`` points; ``rate`` is the per-panel constant ``c``.
        """
        C = self.cumulative(rate)
        CL = C[:-1]
        CM = CL + rate * 0.5 * self.width
        CR = C[1:]
        h = (integrand["left"] * np.exp(-CL) + 4.0 * integrand["mid"] * np.exp(-CM)
             + integrand["right"] * np.exp(-CR))
        acc = np.concatenate(([0.0], np.cumsum(self.width / 6.0 * h)))
        return np.exp(C) * acc

    def outer(self, node_left: np.ndarray, node_right: np.ndarray, rate: np.ndarray) -> np.ndarray:
        """``int_t^u exp(int_v^u c) F(v) dv`` at every even node ``u``.

        ``node_left[j]`` / ``node_right[j]`` are ``F`` at the left / right end
        of panel ``j`` as seen from inside that panel.  Panels are paired for
        composite Simpson; segment panel counts are even so pairs never
        straddle a breakpoint.
        """
        C = self.cumulative(rate)
        fl = node_left * np.exp(-C[:-1])
        fr = node_right * np.exp(-C[1:])
        pair = (self.width[0::2] + self.width[1::2]) / 6.0 * (fl[0::2] + 4.0 * fr[0::2] + fr[1::2])
        acc = np.concatenate(([0.0], np.cumsum(pair)))
        return np.exp(C[0::2]) * acc


class MomentEngine:
    """All moment curves of the equilibrium surplus from one state.

    Curves are indexed by the panel nodes on ``[t, T]``; the terminal value
    is the last entry.  Second-moment curves live on the even nodes.
    """

    def __init__(self, model: MarketModel, prefs: RiskPreferences, state: StatePoint,
                 panels: int = OUTER_PANELS):
        state.check(model)
        self.model = model
        self.prefs = prefs
        self.state = state
        self.degenerate = state.t >= model.horizon
        if self.degenerate:
            return
        self.p = _Panels(model, state.t, panels)
        p = self.p
        f_left = gain_arrays(model, prefs, p.left, "right")
        f_mid = gain_arrays(model, prefs, p.mid, "right")
        f_right = gain_arrays(model, prefs, p.right, "left")
        self.f = {name: {"left": f_left[i], "mid": f_mid[i], "right": f_right[i]}
                  for i, name in enumerate(("f1", "f3", "f4"))}

    # -- primitive curves ----------------------------------------------------

    def _pointwise(self, fn: Callable[..., np.ndarray]) -> dict[str, np.ndarray]:
        """Evaluate ``fn(coef, f1, f3, f4)`` at panel left / mid / right points."""
        out = {}
        for where in ("left", "mid", "right"):
            out[where] = np.asarray(fn(self.p.coef, self.f["f1"][where],
                                       self.f["f3"][where], self.f["f4"][where]))
        return out

    def l_rate(self, q: float) -> np.ndarray:
        return self.p.rate(lambda c: q * (c["alpha"] - 0.5 * (1.0 - q) * c["beta"] ** 2))

    def l_moment(self, q: float) -> np.ndarray:
        """``E_t[L^q(v)]`` at every node."""
        return power(self.state.l, q) * np.exp(self.p.cumulative(self.l_rate(q)))

    @cached_property
    def s_I(self) -> np.ndarray:
        g = self._pointwise(lambda c, f1, f3, f4: c["eta"] + c["theta"] * f3)
        return self.p.inner(g, self.p.rate(lambda c: c["eta"]))

    @cached_property
    def s_II(self) -> np.ndarray:
        lam = self.prefs.lam
        g = self._pointwise(lambda c, f1, f3, f4: c["theta"] * f1)
        rate = self.p.rate(lambda c: c["r"] + lam * c["alpha"]
                           - 0.5 * lam * (lam + 1.0) * c["beta"] ** 2)
        return self.p.inner(g, rate)

    @cached_property
    def s_III(self) -> np.ndarray:
        g = self._pointwise(lambda c, f1, f3, f4: c["theta"] * f4)
        return self.p.inner(g, self.p.rate(lambda c: c["r"]))

    def _xi(self, c: dict, q: float) -> np.ndarray:
        return c["theta"] + q * c["sigma"] * c["rho"] * c["beta"]

    def sl_I(self, q: float) -> np.ndarray:
        g = self._pointwise(lambda c, f1, f3, f4:
                            c["eta"] + self._xi(c, q) * f3 - q * c["beta"] ** 2)
        return self.p.inner(g, self.p.rate(lambda c: c["eta"] - q * c["beta"] ** 2))

    def sl_II(self, q: float) -> np.ndarray:
        lam = self.prefs.lam
        g = self._pointwise(lambda c, f1, f3, f4: self._xi(c, q) * f1)
        rate = self.p.rate(lambda c: c["r"] + lam * c["alpha"]
                           - 0.5 * lam * (lam - 2.0 * q + 1.0) * c["beta"] ** 2)
        return self.p.inner(g, rate)

    def sl_III(self, q: float) -> np.ndarray:
        g = self._pointwise(lambda c, f1, f3, f4: self._xi(c, q) * f4)
        return self.p.inner(g, self.p.rate(lambda c: c["r"]))

    # -- first and cross moments ------------------------------------------------

    def mean_curve(self) -> np.ndarray:
        """``E_t[S(v)]`` at every node."""
        lam = self.prefs.lam
        r_cum = self.p.cumulative(self.p.rate(lambda c: c["r"]))
        return (self.state.s * np.exp(r_cum) + self.s_I * self.l_moment(1.0)
                + self.s_II * self.l_moment(-lam) + self.s_III)

    def cross_curve(self, q: float) -> np.ndarray:
        """``E_t[S(v) L^q(v)]`` at every node."""
        lam = self.prefs.lam
        rate = self.p.rate(lambda c: c["r"]) + self.l_rate(q)
        base = self.state.s * power(self.state.l, q) * np.exp(self.p.cumulative(rate))
        return (base + self.sl_I(q) * self.l_moment(q + 1.0)
                + self.sl_II(q) * self.l_moment(q - lam) + self.sl_III(q) * self.l_moment(q))

    # -- second moment --------------------------------------------------------

    def _at_nodes(self, curve: np.ndarray) -> dict[str, np.ndarray]:
        """A continuous node curve presented as panel left / right values."""
        return {"left": curve[:-1], "right": curve[1:]}

    @cached_property
    def second_moment_terms(self) -> list[tuple[np.ndarray, float]]:
        """``(S2~_X(t, u) at even nodes, power of L it multiplies)`` for X = I..VI."""
        lam = self.prefs.lam
        s, l = self.state.s, self.state.l
        p = self.p
        s_I, s_II, s_III = (self._at_nodes(x) for x in (self.s_I, self.s_II, self.s_III))
        slIII_1 = self._at_nodes(self.sl_III(1.0))
        slI_1 = self._at_nodes(self.sl_I(1.0))
        slII_1 = self._at_nodes(self.sl_II(1.0))
        slIII_m = self._at_nodes(self.sl_III(-lam))
        slI_m = self._at_nodes(self.sl_I(-lam))
        slII_m = self._at_nodes(self.sl_II(-lam))
        growth_r = self._at_nodes(np.exp(p.cumulative(p.rate(lambda c: c["r"]))))
        growth_ra = self._at_nodes(np.exp(p.cumulative(p.rate(lambda c: c["r"] + c["alpha"]))))
        growth_rl = self._at_nodes(np.exp(p.cumulative(p.rate(
            lambda c: c["r"] - lam * (c["alpha"] - 0.5 * (1.0 + lam) * c["beta"] ** 2)))))
        c = p.coef

        def side(where: str) -> dict[str, np.ndarray]:
            f1, f3, f4 = (self.f[n][where] for n in ("f1", "f3", "f4"))
            th, et, sg, rb, b2 = c["theta"], c["eta"], c["sigma"], c["rho"] * c["beta"], c["beta"] ** 2
            drift_l = et + th * f3
            vol_l = sg * f3 - rb
            return {
                "F": 2 * th * f4 * s_I[where] + 2 * drift_l * slIII_1[where] + 2 * sg * vol_l * f4,
                "G": 2 * drift_l * slI_1[where] + sg ** 2 * f3 ** 2 - 2 * rb * sg * f3 + b2,
                "H": 2 * th * f4 * s_II[where] + 2 * th * f1 * slIII_m[where] + 2 * sg ** 2 * f1 * f4,
                "J": (2 * drift_l * slII_1[where] + 2 * th * f1 * slI_m[where]
                      + 2 * sg * vol_l * f1),
                "K": 2 * th * f1 * slII_m[where] + sg ** 2 * f1 ** 2,
                "M": (2 * th * f4 * (s * growth_r[where] + s_III[where])
                      + 2 * s * l * growth_ra[where] * drift_l
                      + 2 * s * power(l, -lam) * growth_rl[where] * th * f1
                      + (sg * f4) ** 2),
            }

        at_left, at_right = side("left"), side("right")
        rates = {
            "F": (lambda c: 2 * c["r"] - c["alpha"], 1.0),
            "G": (lambda c: 2 * c["eta"] - c["beta"] ** 2, 2.0),
            "H": (lambda c: 2 * c["r"] + lam * (c["alpha"] - 0.5 * (lam + 1) * c["beta"] ** 2), -lam),
            "J": (lambda c: 2 * c["r"] + (lam - 1) * (c["alpha"] - 0.5 * lam * c["beta"] ** 2), 1.0 - lam),
            "K": (lambda c: 2 * c["r"] + 2 * lam * (c["alpha"] - 0.5 * (2 * lam + 1) * c["beta"] ** 2),
                  -2.0 * lam),
            "M": (lambda c: 2 * c["r"], 0.0),
        }
        return [(p.outer(at_left[k], at_right[k], p.rate(fn)), q) for k, (fn, q) in rates.items()]

    def second_moment_curve(self) -> np.ndarray:
        """``E_t[S^2(u)]`` at every even node ``u``."""
        p = self.p
        r_cum = p.cumulative(p.rate(lambda c: c["r"]))[0::2]
        total = self.state.s ** 2 * np.exp(2.0 * r_cum)
        for coeff, q in self.second_moment_terms:
            total = total + coeff * (self.l_moment(q)[0::2] if q != 0.0 else 1.0)
        return total

    @property
    def even_nodes(self) -> np.ndarray:
        return self.p.nodes[0::2]

    # -- terminal values --------------------------------------------------------

    def mean(self) -> float:
        return self.state.s if self.degenerate else float(self.mean_curve()[-1])

    def cross(self, q: float) -> float:
        if self.degenerate:
            return self.state.s * power(self.state.l, q)
        return float(self.cross_curve(q)[-1])

    def second_moment(self) -> float:
        return self.state.s ** 2 if self.degenerate else float(self.second_moment_curve()[-1])

    def coefficients(self) -> MomentCoefficients:
        if self.degenerate:
            zero = lambda q: 0.0  # noqa: E731
            return MomentCoefficients(self.state.t, self.model.horizon, 0.0, 0.0, 0.0,
                                      zero, zero, zero, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        s2 = [float(c[-1]) for c, _ in self.second_moment_terms]
        return MomentCoefficients(
            self.state.t, self.model.horizon,
            float(self.s_I[-1]), float(self.s_II[-1]), float(self.s_III[-1]),
            lambda q: float(self.sl_I(q)[-1]),
            lambda q: float(self.sl_II(q)[-1]),
            lambda q: float(self.sl_III(q)[-1]),
            *s2,
        )


def moment_Lq(model: MarketModel, state: StatePoint, q: float, s: float | None = None) -> float:
    """``E_t[L^q(s)] = l^q exp(int_t^s q (alpha - (1 - q) beta^2 / 2))``."""
    state.check(model)
    end = model.horizon if s is None else float(s)
    if not (state.t <= end <= model.horizon):
        raise ValueError(f"horizon {end} outside [{state.t}, {model.horizon}]")
    rate = q * (model.alpha - 0.5 * (1.0 - q) * model.beta ** 2)
    return power(state.l, q) * float(np.exp(rate.integral(state.t, end)))


def mean_S(model: MarketModel, prefs: RiskPreferences, state: StatePoint,
           panels: int = OUTER_PANELS) -> float:
    return MomentEngine(model, prefs, state, panels).mean()


def cross_moment_SLq(model: MarketModel, prefs: RiskPreferences, state: StatePoint, q: float,
                     panels: int = OUTER_PANELS) -> float:
    return MomentEngine(model, prefs, state, panels).cross(q)


def second_moment_S(model: MarketModel, prefs: RiskPreferences, state: StatePoint,
                    panels: int = OUTER_PANELS) -> float:
    return MomentEngine(model, prefs, state, panels).second_moment()


def moment_coefficients(model: MarketModel, prefs: RiskPreferences, state: StatePoint,
                        panels: int = OUTER_PANELS) -> MomentCoefficients:
    return MomentEngine(model, prefs, state, panels).coefficients()


def value(model: MarketModel, prefs: RiskPreferences, state: StatePoint,
          panels: int = OUTER_PANELS) -> ValueBreakdown:
    """Equilibrium value ``Var/2 - (omega1 l^-lam + omega2) * mean`` of the terminal surplus."""
    eng = MomentEngine(model, prefs, state, panels)
    mean = eng.mean()
    second = eng.second_moment()
    v = 0.5 * second - 0.5 * mean ** 2 - prefs.tolerance(state.l) * mean
    return ValueBreakdown(state, mean, second, second - mean ** 2, v)


VALUE_COLUMNS = ("t", "s", "l", "omega1", "omega2", "mean_ST", "var_ST", "value")


def value_row(prefs: RiskPreferences, vb: ValueBreakdown) -> list[float]:
    st = vb.state
    return [st.t, st.s, st.l, prefs.omega1, prefs.omega2, vb.mean_ST, vb.variance_ST, vb.value]


def write_value_csv(dest: str | Path | IO[str], rows: Sequence[Sequence[float]]) -> None:
    write_rows(dest, VALUE_COLUMNS, rows)
