"""Independent reference computations used only by the tests."""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from mvalm.kernels import gain_arrays
from mvalm.market import MarketModel, RiskPreferences, StatePoint


def moments_by_ode(model: MarketModel, prefs: RiskPreferences, state: StatePoint,
                   rtol: float = 1e-12, atol: float = 1e-12) -> dict[str, float]:
    """Integrate the conditional-moment ODE system forward from ``state`` to T.

    Unknowns: E[L^q] for q in {1, 2, -lam, 1-lam, -2lam}, E[S], E[S L],
    E[S L^-lam] and E[S^2].  Coefficients are piecewise constant, so the
    system is integrated segment by segment with the segment's own values.
    """
    lam = prefs.lam
    qs = (1.0, 2.0, -lam, 1.0 - lam, -2.0 * lam)
    t0, T = state.t, model.horizon
    cuts = [t0] + [b for b in model.breakpoints if t0 < b < T] + [T]
    y = np.array([state.l ** q for q in qs]
                 + [state.s, state.s * state.l, state.s * state.l ** -lam, state.s ** 2])
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        mid = 0.5 * (lo + hi)
        r, al, be, sg, rh = (float(getattr(model, n)(mid)) for n in ("r", "alpha", "beta", "sigma", "rho"))
        th, et = float(model.mu(mid)) - r, r - al
        side = "right"

        def rhs(v, y):
            f1, f3, f4 = gain_arrays(model, prefs, min(max(v, lo), hi),
                                     "left" if v >= hi else side)
            L1, L2, Lm, L1m, L2m, ES, ESL1, ESLm, ES2 = y
            a = lambda q: q * (al - 0.5 * (1.0 - q) * be ** 2)  # noqa: E731
            xi = lambda q: th + q * sg * rh * be  # noqa: E731
            dL = [a(q) * y[i] for i, q in enumerate(qs)]
            dES = r * ES + (et + th * f3) * L1 + th * f1 * Lm + th * f4
            dESL1 = ((r + a(1.0)) * ESL1 + (et + xi(1.0) * f3 - be ** 2) * L2
                     + xi(1.0) * f1 * L1m + xi(1.0) * f4 * L1)
            dESLm = ((r + a(-lam)) * ESLm + (et + xi(-lam) * f3 + lam * be ** 2) * L1m
                     + xi(-lam) * f1 * L2m + xi(-lam) * f4 * Lm)
            vol = sg * f3 - rh * be
            dES2 = (2 * r * ES2 + 2 * th * f4 * ES + 2 * (et + th * f3) * ESL1
                    + (sg ** 2 * f3 ** 2 - 2 * rh * be * sg * f3 + be ** 2) * L2
                    + 2 * th * f1 * ESLm + sg ** 2 * f1 ** 2 * L2m
                    + 2 * sg * vol * f1 * L1m + 2 * sg ** 2 * f1 * f4 * Lm
                    + 2 * sg * vol * f4 * L1 + (sg * f4) ** 2)
            return dL + [dES, dESL1, dESLm, dES2]

        sol = solve_ivp(rhs, (lo, hi), y, method="DOP853", rtol=rtol, atol=atol)
        y = sol.y[:, -1]
    names = ["L1", "L2", "Lm", "L1m", "L2m", "ES", "ESL1", "ESLm", "ES2"]
    return dict(zip(names, map(float, y)))
