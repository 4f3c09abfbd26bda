"""Monte Carlo engine for the surplus/liability pair under a feedback rule.

Liability is advanced exactly in log space; surplus by Euler-Maruyama with
the control evaluated at the left end of each step.  Both share one pair
of Gaussian draws per step and path.

Random streams: paths are cut into fixed blocks of ``PATH_BLOCK``; block
``b`` draws from ``PCG64(SeedSequence(seed, spawn_key=(b,)))``.  Results
therefore do not depend on how many workers process the blocks.  With
antithetic sampling, paths ``2k`` and ``2k + 1`` use opposite draws.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Sequence

import numpy as np

from ._csv import write_rows
from .kernels import ConfigurationError, m7
from .market import DomainError, MarketModel, RiskPreferences, StatePoint, merge_breakpoints, power
from .strategy import EquilibriumStrategy
from .valuation import moment_Lq

PATH_BLOCK = 8192
MC_THRESHOLD = 3.0

Strategy = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimConfig:
    seed: int
    paths: int = 100_000
    steps: int = 200
    antithetic: bool = False
    workers: int = 0

    def __post_init__(self) -> None:
        if self.paths < 2:
            raise ConfigurationError("paths must be >= 2")
        if self.steps < 1:
            raise ConfigurationError("steps must be >= 1")
        if self.antithetic and self.paths % 2:
            raise ConfigurationError("antithetic sampling needs an even path count")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class PathBatch:
    times: np.ndarray
    increments: np.ndarray  # (paths, steps, 2): dW1, dW2
    surplus: np.ndarray  # (paths, steps + 1)
    liability: np.ndarray  # (paths, steps + 1)


@dataclass(frozen=True)
class CostEstimate:
    j_hat: float
    std_error: float
    mean_ST: float
    mean_se: float
    var_ST: float
    var_se: float


@dataclass(frozen=True)
class PerturbationReport:
    t: float
    v: float
    epsilons: tuple[float, ...]
    ratios: tuple[float, ...]
    std_errors: tuple[float, ...]
    verdict: bool

    @property
    def passes(self) -> tuple[bool, ...]:
        return tuple(r >= -MC_THRESHOLD * se for r, se in zip(self.ratios, self.std_errors))

    def rows(self) -> list[list]:
        return [[self.t, self.v, e, r, se, "true" if ok else "false"]
                for e, r, se, ok in zip(self.epsilons, self.ratios, self.std_errors, self.passes)]


PERTURBATION_COLUMNS = ("t", "v", "epsilon", "ratio", "std_error", "pass")


def write_perturbation_csv(dest: str | Path | IO[str], reports: Sequence[PerturbationReport]) -> None:
    write_rows(dest, PERTURBATION_COLUMNS, [row for rep in reports for row in rep.rows()])


def step_grid(model: MarketModel, t: float, steps: int, extra: Sequence[float] = ()) -> np.ndarray:
    """Uniform partition of ``[t, T]`` plus breakpoints and ``extra`` nodes inside it."""
    T = model.horizon
    base = np.linspace(t, T, steps + 1)
    inside = [x for x in list(model.breakpoints) + list(extra) if t < x < T]
    return merge_breakpoints(base, inside)


def _block_sizes(cfg: SimConfig) -> list[int]:
    full, rest = divmod(cfg.paths, PATH_BLOCK)
    return [PATH_BLOCK] * full + ([rest] if rest else [])


def _block_normals(cfg: SimConfig, block: int, n: int, steps: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(cfg.seed), spawn_key=(block,))))
    if not cfg.antithetic:
        return rng.standard_normal((n, steps, 2))
    z = rng.standard_normal((n // 2, steps, 2))
    return np.stack((z, -z), axis=1).reshape(n, steps, 2)


class _Coefficients:
    """Per-step coefficient values at the left end of every step."""

    def __init__(self, model: MarketModel, times: np.ndarray):
        left = times[:-1]
        self.dt = np.diff(times)
        self.r = np.asarray(model.r(left))
        self.alpha = np.asarray(model.alpha(left))
        self.beta = np.asarray(model.beta(left))
        self.rho = np.asarray(model.rho(left))
        self.sigma = np.asarray(model.sigma(left))
        self.theta = np.asarray(model.mu(left)) - self.r
        self.eta = self.r - self.alpha
        self.perp = np.sqrt(np.clip(1.0 - self.rho ** 2, 0.0, None)) * self.beta


def _control(strategy: Strategy, t: float, s: np.ndarray, l: np.ndarray, k: int) -> np.ndarray:
    try:
        u = np.asarray(strategy(t, s, l), dtype=float)
    except Exception as exc:  # noqa: BLE001 - re-raised with context
        raise SimulationError(f"strategy failed at step {k} (t={t!r}): {exc}") from exc
    u = np.broadcast_to(u, s.shape)
    if not np.all(np.isfinite(u)):
        bad = int(np.flatnonzero(~np.isfinite(u))[0])
        raise SimulationError(f"strategy returned non-finite control at step {k} (t={t!r}), path {bad}")
    return u


def _run_block(coef: _Coefficients, times: np.ndarray, strategy: Strategy, state: StatePoint,
               z: np.ndarray, keep: bool, spike: tuple[float, float] | None):
    """Advance one block; returns terminal values or full trajectories.

    ``spike=(v, t_end)`` additionally advances a second surplus driven by
    ``u + v`` on steps starting before ``t_end``, on the same draws.
    """
    n, steps = z.shape[0], times.size - 1
    s = np.full(n, float(state.s))
    l = np.full(n, float(state.l))
    s_alt = s.copy() if spike is not None else None
    if keep:
        S = np.empty((n, steps + 1))
        L = np.empty((n, steps + 1))
        S[:, 0], L[:, 0] = s, l
    sq = np.sqrt(coef.dt)
    for k in range(steps):
        dt = coef.dt[k]
        dw1 = z[:, k, 0] * sq[k]
        dw2 = z[:, k, 1] * sq[k]
        t = float(times[k])
        rb, pb = coef.rho[k] * coef.beta[k], coef.perp[k]
        u = _control(strategy, t, s, l, k)
        liab_shock = -rb * l * dw1 - pb * l * dw2
        s_next = (s + (coef.r[k] * s + coef.eta[k] * l + coef.theta[k] * u) * dt
                  + coef.sigma[k] * u * dw1 + liab_shock)
        if spike is not None:
            v, t_end = spike
            u_alt = _control(strategy, t, s_alt, l, k)
            if t < t_end:
                u_alt = u_alt + v
            s_alt = (s_alt + (coef.r[k] * s_alt + coef.eta[k] * l + coef.theta[k] * u_alt) * dt
                     + coef.sigma[k] * u_alt * dw1 + liab_shock)
        l = l * np.exp((coef.alpha[k] - 0.5 * coef.beta[k] ** 2) * dt + rb * dw1 + pb * dw2)
        s = s_next
        if keep:
            S[:, k + 1], L[:, k + 1] = s, l
    if keep:
        return S, L
    return s, l, s_alt


def _prime(strategy: Strategy, times: np.ndarray) -> None:
    prime = getattr(strategy, "prime", None)
    if callable(prime):
        prime(times[:-1])


def _map_blocks(cfg: SimConfig, fn: Callable[[int, int], object]) -> list:
    sizes = _block_sizes(cfg)
    workers = cfg.workers or min(len(sizes), os.cpu_count() or 1, 8)
    if workers <= 1 or len(sizes) == 1:
        return [fn(b, n) for b, n in enumerate(sizes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(len(sizes)), sizes))


def simulate(model: MarketModel, strategy: Strategy, state: StatePoint, cfg: SimConfig,
             extra_nodes: Sequence[float] = ()) -> PathBatch:
    """Full trajectories of ``(S, L)`` from ``state`` to the horizon."""
    state.check(model)
    times = step_grid(model, state.t, cfg.steps, extra_nodes) if state.t < model.horizon \
        else np.array([model.horizon])
    coef = _Coefficients(model, times)
    steps = times.size - 1
    _prime(strategy, times)

    def block(b: int, n: int):
        z = _block_normals(cfg, b, n, steps)
        S, L = _run_block(coef, times, strategy, state, z, True, None)
        return z * np.sqrt(coef.dt)[None, :, None], S, L

    parts = _map_blocks(cfg, block)
    return PathBatch(times, np.concatenate([p[0] for p in parts]),
                     np.concatenate([p[1] for p in parts]), np.concatenate([p[2] for p in parts]))


def simulate_terminal(model: MarketModel, strategy: Strategy, state: StatePoint, cfg: SimConfig,
                      extra_nodes: Sequence[float] = (),
                      spike: tuple[float, float] | None = None):
    """Terminal ``S(T)``, ``L(T)`` (and the spiked ``S(T)`` if requested), in path order."""
    state.check(model)
    n_total = cfg.paths
    if state.t >= model.horizon:
        s = np.full(n_total, float(state.s))
        return s, np.full(n_total, float(state.l)), (s.copy() if spike else None)
    times = step_grid(model, state.t, cfg.steps, extra_nodes)
    coef = _Coefficients(model, times)
    steps = times.size - 1
    _prime(strategy, times)

    def block(b: int, n: int):
        return _run_block(coef, times, strategy, state, _block_normals(cfg, b, n, steps), False, spike)

    parts = _map_blocks(cfg, block)
    s = np.concatenate([p[0] for p in parts])
    l = np.concatenate([p[1] for p in parts])
    s_alt = np.concatenate([p[2] for p in parts]) if spike is not None else None
    return s, l, s_alt


def mean_and_se(samples: np.ndarray, antithetic: bool = False) -> tuple[float, float]:
    """Sample mean and its standard error; antithetic pairs are averaged first."""
    x = np.asarray(samples, dtype=float)
    units = x.reshape(-1, 2).mean(axis=1) if antithetic else x
    if units.size < 2:
        return float(x.mean()), 0.0
    return float(x.mean()), float(units.std(ddof=1) / math.sqrt(units.size))


def cost_from_samples(s_T: np.ndarray, weight: float, antithetic: bool = False) -> CostEstimate:
    """``J = Var/2 - weight * mean`` with delta-method standard errors."""
    mu = float(s_T.mean())
    dev = s_T - mu
    var = float(np.mean(dev ** 2))
    j = 0.5 * var - weight * mu
    _, j_se = mean_and_se(0.5 * (dev ** 2 - var) - weight * dev, antithetic)
    _, m_se = mean_and_se(s_T, antithetic)
    _, v_se = mean_and_se(dev ** 2 - var, antithetic)
    return CostEstimate(j, j_se, mu, m_se, var, v_se)


def estimate_cost(model: MarketModel, prefs: RiskPreferences, strategy: Strategy,
                  state: StatePoint, cfg: SimConfig) -> CostEstimate:
    """Monte Carlo estimate of the mean-variance cost of ``strategy`` from ``state``."""
    s_T, _, _ = simulate_terminal(model, strategy, state, cfg)
    return cost_from_samples(s_T, prefs.tolerance(state.l), cfg.antithetic)


def paired_cost_difference(s_T: np.ndarray, s_alt: np.ndarray, weight: float,
                           antithetic: bool = False) -> tuple[float, float]:
    """``J(alt) - J(base)`` on paired samples, with its paired delta-method error."""
    base = cost_from_samples(s_T, weight).j_hat
    alt = cost_from_samples(s_alt, weight).j_hat
    d = s_alt - s_T
    ds = s_T - s_T.mean()
    dd = d - d.mean()
    cov = float(np.mean(ds * dd))
    var_d = float(np.mean(dd ** 2))
    infl = (ds * dd - cov) + 0.5 * (dd ** 2 - var_d) - weight * dd
    _, se = mean_and_se(infl, antithetic)
    return alt - base, se


def perturbation_test(model: MarketModel, prefs: RiskPreferences, state: StatePoint, v: float,
                      epsilons: Sequence[float], cfg: SimConfig,
                      strategy: Strategy | None = None) -> PerturbationReport:
    """Spike the rule by ``v`` on ``[t, t + eps]`` and measure ``(J_spiked - J) / eps``.

    Both runs share every Gaussian draw.  The verdict passes when each
    quotient is at least ``-3`` standard errors.
    """
    eps = [float(e) for e in epsilons]
    if not eps:
        raise ConfigurationError("epsilon list is empty")
    if any(e <= 0.0 for e in eps):
        raise ConfigurationError("epsilons must be positive")
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigurationError("epsilons must be strictly decreasing")
    if state.t + eps[0] > model.horizon + 1e-12:
        raise ConfigurationError(f"t + max(eps) = {state.t + eps[0]} exceeds horizon {model.horizon}")
    state.check(model)
    rule = strategy if strategy is not None else EquilibriumStrategy(model, prefs)
    weight = prefs.tolerance(state.l)
    ratios, errors = [], []
    for e in eps:
        end = min(state.t + e, model.horizon)
        s_T, _, s_alt = simulate_terminal(model, rule, state, cfg, extra_nodes=(end,),
                                          spike=(float(v), end))
        diff, se = paired_cost_difference(s_T, s_alt, weight, cfg.antithetic)
        ratios.append(diff / e)
        errors.append(se / e)
    verdict = all(r >= -MC_THRESHOLD * se for r, se in zip(ratios, errors))
    return PerturbationReport(float(state.t), float(v), tuple(eps), tuple(ratios), tuple(errors), verdict)


def lambda_mean(model: MarketModel, prefs: RiskPreferences, t: float, s_eval: float, l_t: float) -> float:
    """Conditional mean of the first-order condition process at ``s_eval``.

    The centred terms vanish in expectation, leaving
    ``theta(s) M7(s) (l_t^-lam - E_t[L^-lam(s)])``.
    """
    if not (0.0 <= t <= s_eval <= model.horizon):
        raise DomainError(f"need 0 <= t <= s_eval <= T, got t={t}, s_eval={s_eval}")
    if s_eval == t:
        return 0.0
    future = moment_Lq(model, StatePoint(t, 0.0, l_t), -prefs.lam, s_eval)
    return float(model.theta(s_eval)) * m7(model, prefs, s_eval) * (power(l_t, -prefs.lam) - future)
