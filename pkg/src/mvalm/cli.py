"""Command-line front end.

Usage::

    mvalm <command> --scenario FILE --out FILE [--seed N] [--paths N] [--steps N]

Commands: ``gains``, ``strategy``, ``value``, ``simulate``, ``sweep``, ``verify``.
Exit status: 0 success / all checks pass, 1 a verification check failed,
2 configuration or validation error.

Scenario files are TOML with flat keys.  Unknown keys are errors.

=====================  =========================================================
key                    meaning
=====================  =========================================================
horizon                terminal time T (required)
r mu sigma             bond rate, stock drift, stock volatility
alpha beta rho         liability drift, liability volatility, correlation
omega1 omega2 lambda   risk tolerance ``omega1 * l**-lambda + omega2`` (required)
s0 l0                  initial surplus and liability (required)
eval_times             evaluation times (default ``[0.0]``)
liabilities            liability grid for ``strategy`` (default ``[l0]``)
sweep_parameter        ``"omega1"`` or ``"omega2"``
sweep_values           explicit sweep grid, or
sweep_min sweep_max    with ``sweep_points``: a uniform sweep grid
seed paths steps       Monte Carlo settings (``seed`` may come from ``--seed``)
antithetic             antithetic sampling flag (default false)
moment_steps           Euler steps for the verify moment checks (default 2000)
perturbation_times     spike times for verify (default: eval_times that fit)
spike_sizes            spike sizes v (default ``[1, -1, 5, -5]``)
epsilons               spike widths, decreasing (default ``[0.5, 0.25, 0.125, 0.0625]``)
=====================  =========================================================

Each market coefficient is either a number or given piecewise by the pair
``<name>_breakpoints = [0, ..., T]`` and ``<name>_values`` (one value per
interval).  Required market coefficients: all six.
"""

from __future__ import annotations

import argparse
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ._csv import write_rows
from .kernels import (
    ConfigurationError,
    build_schedule,
    m1,
    m1_quadrature,
    m3,
    m3_quadrature,
    ode_residuals,
)
from .market import CoefficientCurve, DomainError, MarketModel, RiskPreferences, StatePoint, validate
from .numerics import StencilError, TimeGrid
from .simulation import (
    MC_THRESHOLD,
    SimConfig,
    cost_from_samples,
    mean_and_se,
    perturbation_test,
    simulate_terminal,
)
from .strategy import (
    EquilibriumStrategy,
    appendix_control,
    equilibrium_control,
    strategy_curve,
    write_strategy_csv,
)
from .valuation import MomentEngine, moment_Lq, value, value_row, write_value_csv

COEFFICIENTS = ("r", "mu", "sigma", "alpha", "beta", "rho")
_SCALAR_KEYS = {"horizon", "omega1", "omega2", "lambda", "s0", "l0", "seed", "paths", "steps",
                "antithetic", "moment_steps", "sweep_parameter", "sweep_min", "sweep_max",
                "sweep_points"}
_LIST_KEYS = {"eval_times", "liabilities", "sweep_values", "perturbation_times", "spike_sizes",
              "epsilons"}
KNOWN_KEYS = (_SCALAR_KEYS | _LIST_KEYS | set(COEFFICIENTS)
              | {f"{c}_breakpoints" for c in COEFFICIENTS} | {f"{c}_values" for c in COEFFICIENTS})

GAIN_NODES = 101
MOMENT_POWERS = (-1.0, -0.5, 1.0, 2.0)


class ScenarioError(ConfigurationError):
    pass


@dataclass(frozen=True)
class Scenario:
    market: MarketModel
    prefs: RiskPreferences
    s0: float
    l0: float
    eval_times: tuple[float, ...] = (0.0,)
    liabilities: tuple[float, ...] = ()
    sweep: tuple[str, tuple[float, ...]] | None = None
    seed: int | None = None
    paths: int = 100_000
    steps: int = 200
    antithetic: bool = False
    moment_steps: int = 2000
    perturbation_times: tuple[float, ...] | None = None
    spike_sizes: tuple[float, ...] = (1.0, -1.0, 5.0, -5.0)
    epsilons: tuple[float, ...] = (0.5, 0.25, 0.125, 0.0625)
    f4_scale: float = field(default=1.0, compare=False)

    def sim(self, steps: int | None = None) -> SimConfig:
        if self.seed is None:
            raise ScenarioError("a seed is required: set 'seed' in the scenario or pass --seed")
        return SimConfig(seed=self.seed, paths=self.paths, steps=steps or self.steps,
                         antithetic=self.antithetic)

    def strategy(self, prefs: RiskPreferences | None = None) -> EquilibriumStrategy:
        return EquilibriumStrategy(self.market, prefs or self.prefs, f4_scale=self.f4_scale)

    def spike_times(self) -> tuple[float, ...]:
        if self.perturbation_times is not None:
            return self.perturbation_times
        T, widest = self.market.horizon, max(self.epsilons)
        return tuple(t for t in self.eval_times if t + widest <= T)


def _number(raw: dict, key: str, default=None, kind=float):
    if key not in raw:
        if default is None:
            raise ScenarioError(f"missing required key '{key}'")
        return default
    value = raw[key]
    if kind is bool:
        if not isinstance(value, bool):
            raise ScenarioError(f"'{key}' must be true or false")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"'{key}' must be a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ScenarioError(f"'{key}' must be an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ScenarioError(f"'{key}' must be finite")
    return float(value)


def _floats(raw: dict, key: str, default=None) -> tuple[float, ...] | None:
    if key not in raw:
        return default
    value = raw[key]
    if not isinstance(value, list) or not value:
        raise ScenarioError(f"'{key}' must be a non-empty array of numbers")
    try:
        return tuple(_number({key: x}, key) for x in value)
    except ScenarioError:
        raise ScenarioError(f"'{key}' must be a non-empty array of numbers") from None


def _curve(raw: dict, name: str, horizon: float) -> CoefficientCurve | float:
    bps, vals = f"{name}_breakpoints", f"{name}_values"
    piecewise = bps in raw or vals in raw
    if name in raw and piecewise:
        raise ScenarioError(f"give either '{name}' or '{bps}'/'{vals}', not both")
    if not piecewise:
        return _number(raw, name)
    if bps not in raw or vals not in raw:
        raise ScenarioError(f"'{bps}' and '{vals}' must be given together")
    b, v = _floats(raw, bps), _floats(raw, vals)
    if not math.isclose(b[-1], horizon, rel_tol=0.0, abs_tol=1e-12):
        raise ScenarioError(f"'{bps}' must end at the horizon {horizon}")
    try:
        return CoefficientCurve(np.array(b), np.array(v))
    except ValueError as exc:
        raise ScenarioError(f"{name}: {exc}") from None


def scenario_from_dict(raw: dict) -> Scenario:
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ScenarioError(f"unknown scenario keys: {', '.join(unknown)}")
    horizon = _number(raw, "horizon")
    if horizon <= 0.0:
        raise ScenarioError("'horizon' must be positive")
    try:
        market = MarketModel(horizon, *(_curve(raw, c, horizon) for c in COEFFICIENTS))
    except ValueError as exc:
        raise ScenarioError(str(exc)) from None
    prefs = RiskPreferences(_number(raw, "omega1"), _number(raw, "omega2"), _number(raw, "lambda"))
    s0, l0 = _number(raw, "s0"), _number(raw, "l0")
    if l0 <= 0.0:
        raise ScenarioError("'l0' must be positive")
    eval_times = _floats(raw, "eval_times", (0.0,))
    if any(not 0.0 <= t <= horizon for t in eval_times):
        raise ScenarioError(f"eval_times must lie in [0, {horizon}]")
    liabilities = _floats(raw, "liabilities", (l0,))
    if any(l <= 0.0 for l in liabilities):
        raise ScenarioError("liabilities must be positive")

    sweep = None
    grid_keys = [k for k in ("sweep_min", "sweep_max", "sweep_points") if k in raw]
    if "sweep_parameter" in raw:
        param = raw["sweep_parameter"]
        if param not in ("omega1", "omega2"):
            raise ScenarioError("'sweep_parameter' must be \"omega1\" or \"omega2\"")
        if "sweep_values" in raw and grid_keys:
            raise ScenarioError("give either 'sweep_values' or sweep_min/sweep_max/sweep_points")
        if "sweep_values" in raw:
            values = _floats(raw, "sweep_values")
        else:
            lo, hi = _number(raw, "sweep_min"), _number(raw, "sweep_max")
            points = _number(raw, "sweep_points", kind=int)
            if points < 1:
                raise ScenarioError("'sweep_points' must be >= 1")
            values = tuple(float(x) for x in np.linspace(lo, hi, points))
        sweep = (param, values)
    elif "sweep_values" in raw or grid_keys:
        raise ScenarioError("sweep grid given without 'sweep_parameter'")

    scn = Scenario(
        market=market, prefs=prefs, s0=s0, l0=l0, eval_times=eval_times, liabilities=liabilities,
        sweep=sweep,
        seed=_number(raw, "seed", -1, int) if "seed" in raw else None,
        paths=_number(raw, "paths", 100_000, int),
        steps=_number(raw, "steps", 200, int),
        antithetic=_number(raw, "antithetic", False, bool),
        moment_steps=_number(raw, "moment_steps", 2000, int),
        perturbation_times=_floats(raw, "perturbation_times"),
        spike_sizes=_floats(raw, "spike_sizes", (1.0, -1.0, 5.0, -5.0)),
        epsilons=_floats(raw, "epsilons", (0.5, 0.25, 0.125, 0.0625)),
    )
    _check_sim(scn)
    return scn


def _check_sim(scn: Scenario) -> None:
    if scn.seed is not None and not 0 <= scn.seed < 2 ** 64:
        raise ScenarioError("'seed' must be a 64-bit unsigned integer")
    if scn.paths < 2 or scn.steps < 1 or scn.moment_steps < 1:
        raise ScenarioError("need paths >= 2, steps >= 1 and moment_steps >= 1")
    if scn.antithetic and scn.paths % 2:
        raise ScenarioError("antithetic sampling needs an even path count")
    eps = scn.epsilons
    if any(e <= 0.0 for e in eps) or any(b >= a for a, b in zip(eps, eps[1:])):
        raise ScenarioError("epsilons must be positive and strictly decreasing")
    if any(t < 0.0 or t + eps[0] > scn.market.horizon for t in scn.perturbation_times or ()):
        raise ScenarioError("perturbation_times must satisfy 0 <= t and t + max(epsilons) <= T")


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror or exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(raw)


def _require_valid(scn: Scenario) -> None:
    problems = validate(scn.market, scn.prefs)
    if problems:
        raise ScenarioError("invalid scenario: " + "; ".join(str(p) for p in problems))


def _state(scn: Scenario, t: float) -> StatePoint:
    return StatePoint(float(t), scn.s0, scn.l0)


# ---------------------------------------------------------------- commands

def cmd_gains(scn: Scenario, out: str | Path) -> int:
    _require_valid(scn)
    grid = TimeGrid.uniform(0.0, scn.market.horizon, GAIN_NODES, scn.market.breakpoints)
    build_schedule(scn.market, scn.prefs, grid).write_csv(out)
    return 0


def cmd_strategy(scn: Scenario, out: str | Path) -> int:
    _require_valid(scn)
    write_strategy_csv(out, strategy_curve(scn.market, scn.prefs, scn.eval_times, scn.liabilities))
    return 0


def cmd_value(scn: Scenario, out: str | Path) -> int:
    _require_valid(scn)
    rows = [value_row(scn.prefs, value(scn.market, scn.prefs, _state(scn, t))) for t in scn.eval_times]
    write_value_csv(out, rows)
    return 0


SIMULATE_COLUMNS = ("t", "s", "l", "paths", "steps", "j_hat", "std_error", "mean_ST", "mean_se",
                    "var_ST", "var_se", "value", "z")


def cmd_simulate(scn: Scenario, out: str | Path) -> int:
    _require_valid(scn)
    cfg = scn.sim()
    rule = scn.strategy()
    rows = []
    for t in scn.eval_times:
        st = _state(scn, t)
        s_T, _, _ = simulate_terminal(scn.market, rule, st, cfg)
        est = cost_from_samples(s_T, scn.prefs.tolerance(st.l), cfg.antithetic)
        closed = value(scn.market, scn.prefs, st).value
        z = (est.j_hat - closed) / est.std_error if est.std_error > 0.0 else 0.0
        rows.append([st.t, st.s, st.l, cfg.paths, cfg.steps, est.j_hat, est.std_error, est.mean_ST,
                     est.mean_se, est.var_ST, est.var_se, closed, z])
    write_rows(out, SIMULATE_COLUMNS, rows)
    return 0


SWEEP_COLUMNS = ("t", "sweep_value", "u_star", "value")


def cmd_sweep(scn: Scenario, out: str | Path) -> int:
    _require_valid(scn)
    if scn.sweep is None:
        raise ScenarioError("no sweep configured: set 'sweep_parameter' and a sweep grid")
    param, grid = scn.sweep
    rows = []
    for t in scn.eval_times:
        st = _state(scn, t)
        for x in grid:
            prefs = scn.prefs.replace(**{param: x})
            problems = validate(scn.market, prefs)
            if problems:
                raise ScenarioError(f"{param}={x}: " + "; ".join(str(p) for p in problems))
            u = equilibrium_control(scn.market, prefs, st).u_star
            rows.append([st.t, x, u, value(scn.market, prefs, st).value])
    write_rows(out, SWEEP_COLUMNS, rows)
    return 0


# ---------------------------------------------------------------- verify

REPORT_COLUMNS = ("check", "case", "statistic", "threshold", "pass")


@dataclass
class Report:
    rows: list[list] = field(default_factory=list)

    def add(self, check: str, case: str, statistic: float, threshold: float, ok: bool) -> None:
        self.rows.append([check, case, float(statistic), float(threshold), "true" if ok else "false"])

    @property
    def ok(self) -> bool:
        return all(r[4] == "true" for r in self.rows)


def _rel_gap(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def check_ode_residuals(scn: Scenario, rep: Report, h: float = 1e-4, tol: float = 1e-4) -> None:
    T = scn.market.horizon
    worst, skipped = 0.0, 0
    for t in np.linspace(0.0, T, GAIN_NODES)[1:-1]:
        try:
            worst = max(worst, float(np.max(np.abs(ode_residuals(scn.market, scn.prefs, t, h)))))
        except StencilError:
            skipped += 1
    rep.add("ode_residuals", f"{GAIN_NODES - 2 - skipped} nodes, h={h:g}", worst, tol, worst < tol)


def check_kernel_quadrature(scn: Scenario, rep: Report, tol: float = 1e-6) -> None:
    T = scn.market.horizon
    for t in np.linspace(0.0, T, 11):
        g1 = _rel_gap(m1(scn.market, scn.prefs, t), m1_quadrature(scn.market, scn.prefs, t))
        g3 = _rel_gap(m3(scn.market, t), m3_quadrature(scn.market, t))
        rep.add("kernel_quadrature", f"M1 t={t:g}", g1, tol, g1 <= tol)
        rep.add("kernel_quadrature", f"M3 t={t:g}", g3, tol, g3 <= tol)


def check_surplus_independence(scn: Scenario, rep: Report) -> None:
    T = scn.market.horizon
    mismatches = 0
    for t in np.linspace(0.0, T, GAIN_NODES):
        for l in (0.5, 3.0, 10.0):
            us = {equilibrium_control(scn.market, scn.prefs, StatePoint(float(t), s, l)).u_star
                  for s in (-10.0, 0.0, 5.0, 100.0)}
            mismatches += len(us) - 1
    rep.add("surplus_independence", "s in {-10, 0, 5, 100}", mismatches, 0.0, mismatches == 0)


def check_comparison_rule(scn: Scenario, rep: Report, tol: float = 1e-10) -> None:
    prefs = scn.prefs.replace(omega1=0.0, omega2=scn.prefs.omega2 if scn.prefs.omega2 > 0 else 1.0)
    worst = 0.0
    for t in np.linspace(0.0, scn.market.horizon, GAIN_NODES):
        for l in (0.5, 3.0, 10.0):
            st = StatePoint(float(t), scn.s0, l)
            u = equilibrium_control(scn.market, prefs, st).u_star
            worst = max(worst, abs(u - appendix_control(scn.market, prefs, st)) / (1.0 + abs(u)))
    rep.add("comparison_rule", f"omega1=0, omega2={prefs.omega2:g}", worst, tol, worst <= tol)


def _z(samples: np.ndarray, target: float, antithetic: bool) -> float:
    mean, se = mean_and_se(samples, antithetic)
    if se == 0.0:
        return 0.0 if mean == target else math.inf
    return (mean - target) / se


def check_moments(scn: Scenario, rep: Report) -> None:
    cfg = scn.sim(scn.moment_steps)
    rule = scn.strategy()
    for t in scn.eval_times:
        if t >= scn.market.horizon:
            continue
        st = _state(scn, t)
        s_T, l_T, _ = simulate_terminal(scn.market, rule, st, cfg)
        eng = MomentEngine(scn.market, scn.prefs, st)
        for q in MOMENT_POWERS:
            z = _z(np.exp(q * np.log(l_T)), moment_Lq(scn.market, st, q), cfg.antithetic)
            rep.add("moment_mc", f"E L^{q:g} t={t:g}", abs(z), MC_THRESHOLD, abs(z) <= MC_THRESHOLD)
        for name, samples, target in (("E S", s_T, eng.mean()),
                                      ("E S L", s_T * l_T, eng.cross(1.0)),
                                      ("E S^2", s_T * s_T, eng.second_moment())):
            z = _z(samples, target, cfg.antithetic)
            rep.add("moment_mc", f"{name} t={t:g}", abs(z), MC_THRESHOLD, abs(z) <= MC_THRESHOLD)


def check_value(scn: Scenario, rep: Report) -> None:
    cfg = scn.sim()
    rule = scn.strategy()
    for t in scn.eval_times:
        st = _state(scn, t)
        s_T, _, _ = simulate_terminal(scn.market, rule, st, cfg)
        est = cost_from_samples(s_T, scn.prefs.tolerance(st.l), cfg.antithetic)
        closed = value(scn.market, scn.prefs, st).value
        if est.std_error > 0.0:
            z = abs(est.j_hat - closed) / est.std_error
        else:
            z = 0.0 if math.isclose(est.j_hat, closed, rel_tol=1e-12, abs_tol=1e-12) else math.inf
        rep.add("value_mc", f"J t={t:g}", z, MC_THRESHOLD, z <= MC_THRESHOLD)


def check_perturbation(scn: Scenario, rep: Report) -> None:
    cfg = scn.sim()
    rule = scn.strategy()
    for t in scn.spike_times():
        for v in scn.spike_sizes:
            r = perturbation_test(scn.market, scn.prefs, _state(scn, t), v, scn.epsilons, cfg, rule)
            for e, ratio, se, ok in zip(r.epsilons, r.ratios, r.std_errors, r.passes):
                # statistic: quotient in standard errors; pass iff >= -3
                stat = ratio / se if se > 0.0 else (0.0 if ratio >= 0.0 else -math.inf)
                rep.add("perturbation", f"t={t:g} v={v:g} eps={e:g}", stat, -MC_THRESHOLD, ok)


VERIFY_CHECKS = (check_ode_residuals, check_kernel_quadrature, check_surplus_independence,
                 check_comparison_rule, check_moments, check_value, check_perturbation)


def run_verify(scn: Scenario) -> Report:
    rep = Report()
    problems = validate(scn.market, scn.prefs)
    for p in problems:
        rep.add("validation", str(p), math.nan, math.nan, False)
    if problems:
        return rep
    scn.sim()  # fail early without a seed
    for check in VERIFY_CHECKS:
        check(scn, rep)
    return rep


def cmd_verify(scn: Scenario, out: str | Path) -> int:
    rep = run_verify(scn)
    write_rows(out, REPORT_COLUMNS, rep.rows)
    if any(r[0] == "validation" for r in rep.rows):
        return 2
    return 0 if rep.ok else 1


COMMANDS = {
    "gains": cmd_gains,
    "strategy": cmd_strategy,
    "value": cmd_value,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvalm", description=__doc__.split("\n")[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--scenario", required=True, help="scenario TOML file")
    parser.add_argument("--out", required=True, help="output CSV file")
    parser.add_argument("--seed", type=int, help="override the scenario seed")
    parser.add_argument("--paths", type=int, help="override the Monte Carlo path count")
    parser.add_argument("--steps", type=int, help="override the Euler step count")
    parser.add_argument("--debug-f4-scale", type=float, default=1.0, metavar="X",
                        help="debugging: multiply the f4 gain by X in every simulation")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = load_scenario(args.scenario)
        overrides = {k: getattr(args, k) for k in ("seed", "paths", "steps") if getattr(args, k) is not None}
        scn = replace(scn, f4_scale=args.debug_f4_scale, **overrides)
        _check_sim(scn)
        return COMMANDS[args.command](scn, args.out)
    except (ConfigurationError, DomainError) as exc:
        print(f"mvalm: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mvalm: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
