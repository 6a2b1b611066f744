"""Reference policies for the three environments.

The LQR policy is closed form: the position moves a fraction ``omega`` of
the way from the current holding towards a damped Markowitz target
``psi * p / (2 lambda)``. The band and threshold policies have one free
parameter each, found by a grid search on common random numbers.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .env import EnvKind, EnvParams, predictor_paths, simulate

__all__ = [
    "LqrSolution",
    "BandSolution",
    "ThresholdSolution",
    "GridSearchResult",
    "f_c",
    "f_c_alt",
    "solve_lqr",
    "lqr_policy",
    "band_policy",
    "threshold_policy",
    "grid_search_scalar",
    "evaluate_family",
    "search_band_width",
    "search_threshold",
    "search_linear_gains",
    "solve_reference",
]


def f_c(x):
    """Cost-damping function ``2 / (1 + sqrt(1 + 4 / x**2))``, in (0, 1)."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("f_c is defined for x > 0")
    out = 2.0 / (1.0 + np.sqrt(1.0 + 4.0 / (x * x)))
    return float(out) if out.ndim == 0 else out


def f_c_alt(x):
    """Same function as :func:`f_c` in the form ``x/2 (sqrt(x^2 + 4) - x)``."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("f_c is defined for x > 0")
    out = 0.5 * x * (np.sqrt(x * x + 4.0) - x)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LqrSolution:
    omega: float
    psi: float
    lambda_risk: float

    @property
    def markowitz_scale(self) -> float:
        return 1.0 / (2.0 * self.lambda_risk)

    @property
    def gains(self) -> tuple[float, float]:
        """``(k1, k2)`` of the linear form ``a = -k1 * pi + k2 * p``."""
        return self.omega, self.omega * self.psi * self.markowitz_scale

    def __call__(self, position, predictor):
        return lqr_policy(position, predictor, self)

    def to_dict(self) -> dict:
        return {"kind": "lqr", "omega": self.omega, "psi": self.psi,
                "lambda_risk": self.lambda_risk, "markowitz_scale": self.markowitz_scale}


@dataclass(frozen=True)
class BandSolution:
    half_width: float
    lambda_risk: float

    def __post_init__(self):
        if self.half_width < 0:
            raise ValueError("half_width must be >= 0")

    @property
    def markowitz_scale(self) -> float:
        return 1.0 / (2.0 * self.lambda_risk)

    def __call__(self, position, predictor):
        return band_policy(position, predictor, self)

    def to_dict(self) -> dict:
        return {"kind": "band", "half_width": self.half_width,
                "lambda_risk": self.lambda_risk, "markowitz_scale": self.markowitz_scale}


@dataclass(frozen=True)
class ThresholdSolution:
    threshold: float
    maxpos: float

    def __post_init__(self):
        if self.threshold < 0:
            raise ValueError("threshold must be >= 0")

    def __call__(self, position, predictor):
        return threshold_policy(position, predictor, self)

    def to_dict(self) -> dict:
        return {"kind": "maxpos", "threshold": self.threshold, "maxpos": self.maxpos}


def solve_lqr(gamma_cost: float, lambda_risk: float, rho: float) -> LqrSolution:
    if lambda_risk <= 0:
        raise ValueError("lambda_risk must be > 0")
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    if gamma_cost < 0:
        raise ValueError("gamma_cost must be >= 0")
    if gamma_cost == 0:
        return LqrSolution(1.0, 1.0, lambda_risk)
    omega = f_c(np.sqrt(lambda_risk / gamma_cost))
    psi = omega / (1.0 - (1.0 - omega) * rho)
    return LqrSolution(omega, psi, lambda_risk)


def lqr_policy(position, predictor, sol: LqrSolution):
    k1, k2 = sol.gains
    return -k1 * position + k2 * predictor


def band_policy(position, predictor, sol: BandSolution):
    m = predictor * sol.markowitz_scale
    upper = m + sol.half_width
    lower = m - sol.half_width
    return np.where(position > upper, upper - position,
                    np.where(position < lower, lower - position, 0.0 * position))


def threshold_policy(position, predictor, sol: ThresholdSolution):
    M, q = sol.maxpos, sol.threshold
    return np.where(predictor > q, M - position,
                    np.where(predictor < -q, -M - position, 0.0 * position))


@dataclass
class GridSearchResult:
    grid: np.ndarray
    values: np.ndarray
    best_param: float
    best_value: float
    pnl: Optional[np.ndarray] = None
    stages: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["param", "mean_reward", "mean_pnl"])
            pnl = self.pnl if self.pnl is not None else np.full_like(self.values, np.nan)
            for x, v, q in zip(self.grid, self.values, pnl):
                w.writerow([repr(float(x)), repr(float(v)), repr(float(q))])


def grid_search_scalar(objective: Callable, lo: float, hi: float, n_points: int,
                       seed: int = 0, vectorized: bool = False) -> GridSearchResult:
    """Maximise ``objective(param, seed)`` over ``linspace(lo, hi, n_points)``.

    Every point is scored with the same ``seed``. With ``vectorized=True`` the
    objective receives the whole grid at once. The objective may return
    ``(reward, pnl)``; only the first element is maximised. Ties resolve to
    the smallest parameter.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")
    if n_points < 2:
        raise ValueError("need at least two grid points")
    grid = np.linspace(lo, hi, n_points)
    if vectorized:
        out = objective(grid, seed)
    else:
        out = [objective(float(x), seed) for x in grid]
        if out and isinstance(out[0], tuple):
            out = tuple(np.array(col) for col in zip(*out))
    pnl = None
    if isinstance(out, tuple):
        values, pnl = (np.asarray(o, dtype=float) for o in out)
    else:
        values = np.asarray(out, dtype=float)
    i = int(np.argmax(values))
    return GridSearchResult(grid, values, float(grid[i]), float(values[i]), pnl)


def evaluate_family(make_policy: Callable, params: EnvParams, values, n_episodes: int,
                    horizon: int, seed: int):
    """Mean reward and PnL of ``make_policy(v)`` for every ``v``, on shared paths."""
    values = np.asarray(values, dtype=float)
    rng = np.random.default_rng(seed)
    paths = predictor_paths(params.rho, n_episodes, horizon, rng)
    policy = make_policy(values[:, None])
    res = simulate(policy, params.objective(), paths)
    return res.mean_reward.mean(axis=1), res.mean_pnl.mean(axis=1)


def _search(make_policy, params, lo, hi, n_points, n_episodes, horizon, seed, refine):
    def objective(grid, s):
        return evaluate_family(make_policy, params, grid, n_episodes, horizon, s)

    coarse = grid_search_scalar(objective, lo, hi, n_points, seed, vectorized=True)
    if not refine:
        coarse.stages = [coarse]
        return coarse
    step = (hi - lo) / (n_points - 1)
    flo = max(lo, coarse.best_param - step)
    fhi = min(hi, coarse.best_param + step)
    n_fine = int(round((fhi - flo) / (step / 10))) + 1
    fine = grid_search_scalar(objective, flo, fhi, n_fine, seed, vectorized=True)
    grid = np.concatenate([coarse.grid, fine.grid])
    vals = np.concatenate([coarse.values, fine.values])
    pnl = np.concatenate([coarse.pnl, fine.pnl])
    order = np.argsort(grid, kind="stable")
    best = fine if fine.best_value > coarse.best_value else coarse
    return GridSearchResult(grid[order], vals[order], best.best_param, best.best_value,
                            pnl[order], [coarse, fine])


def search_band_width(params: EnvParams, lo=0.0, hi=2.0, n_points=81, n_episodes=20,
                      horizon=5000, seed=0, refine=True):
    if params.kind is not EnvKind.LIN_COST_QUAD_RISK:
        raise ValueError("band search needs the band environment")
    lam = params.lambda_risk

    def make(b):
        def policy(pi, p):
            m = p / (2.0 * lam)
            return np.where(pi > m + b, m + b - pi, np.where(pi < m - b, m - b - pi, 0.0 * pi))
        return policy

    result = _search(make, params, lo, hi, n_points, n_episodes, horizon, seed, refine)
    return BandSolution(result.best_param, lam), result


def search_threshold(params: EnvParams, lo=0.0, hi=1.0, n_points=101, n_episodes=20,
                     horizon=5000, seed=0, refine=True):
    if params.kind is not EnvKind.LIN_COST_MAXPOS:
        raise ValueError("threshold search needs the maxpos environment")
    M = params.maxpos

    def make(q):
        return lambda pi, p: np.where(p > q, M - pi, np.where(p < -q, -M - pi, 0.0 * pi))

    result = _search(make, params, lo, hi, n_points, n_episodes, horizon, seed, refine)
    return ThresholdSolution(result.best_param, M), result


def search_linear_gains(params: EnvParams, k1_grid, k2_grid, n_episodes=20, horizon=5000, seed=0):
    """Brute-force mean reward of every ``a = -k1 pi + k2 p`` on shared paths.

    Returns ``(values, (k1*, k2*))`` with ``values[i, j]`` the score of
    ``(k1_grid[i], k2_grid[j])``.
    """
    k1_grid = np.asarray(k1_grid, dtype=float)
    k2_grid = np.asarray(k2_grid, dtype=float)
    k1, k2 = (g.ravel()[:, None] for g in np.meshgrid(k1_grid, k2_grid, indexing="ij"))
    paths = predictor_paths(params.rho, n_episodes, horizon, np.random.default_rng(seed))
    res = simulate(lambda pi, p: -k1 * pi + k2 * p, params.objective(), paths)
    values = res.mean_reward.mean(axis=1).reshape(len(k1_grid), len(k2_grid))
    i, j = np.unravel_index(int(np.argmax(values)), values.shape)
    return values, (float(k1_grid[i]), float(k2_grid[j]))


def solve_reference(params: EnvParams, seed: int = 0, **search_kw):
    """Reference policy for any environment; returns ``(solution, search or None)``."""
    if params.kind is EnvKind.QUAD_COST_QUAD_RISK:
        return solve_lqr(params.gamma_cost, params.lambda_risk, params.rho), None
    if params.kind is EnvKind.LIN_COST_QUAD_RISK:
        return search_band_width(params, seed=seed, **search_kw)
    return search_threshold(params, seed=seed, **search_kw)
