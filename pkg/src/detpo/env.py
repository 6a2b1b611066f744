"""Single-asset trading environments driven by an AR(1) return predictor.

The observable state is the pair (position, predictor). Three reward
functions are provided:

* ``lqr``    - quadratic trading cost, quadratic risk penalty
* ``band``   - proportional trading cost, quadratic risk penalty
* ``maxpos`` - proportional trading cost, hard cap ``|position| <= M``
  (optionally softened by a tanh barrier in the reward)

Rewards for the trade taken at ``t`` use the predictor ``p_t`` observed when
acting; the predictor advances afterwards.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

__all__ = [
    "EnvKind",
    "BarrierParams",
    "EnvParams",
    "EnvState",
    "StepResult",
    "Trajectory",
    "TradingEnv",
    "predictor_step",
    "predictor_paths",
    "reward_terms",
    "barrier_penalty",
    "rollout",
    "simulate",
]


class EnvKind(str, enum.Enum):
    QUAD_COST_QUAD_RISK = "lqr"
    LIN_COST_QUAD_RISK = "band"
    LIN_COST_MAXPOS = "maxpos"

    @property
    def quadratic_risk(self) -> bool:
        return self is not EnvKind.LIN_COST_MAXPOS


@dataclass(frozen=True)
class BarrierParams:
    """Soft penalty ``beta * (tanh(alpha * (|pi + a| - (1 + gamma) M)) + 1)``."""

    beta: float = 10.0
    alpha: float = 10.0
    gamma: float = 0.25

    def __post_init__(self):
        for name in ("beta", "alpha", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"barrier {name} must be > 0, got {getattr(self, name)}")


@dataclass(frozen=True)
class EnvParams:
    kind: EnvKind
    rho: float = 0.9
    gamma_cost: float = 1.0
    lambda_risk: Optional[float] = None
    maxpos: Optional[float] = None
    noisy_rewards: bool = False
    sigma_r: float = 0.0
    barrier: Optional[BarrierParams] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.gamma_cost < 0:
            raise ValueError(f"gamma_cost must be >= 0, got {self.gamma_cost}")
        if self.kind.quadratic_risk:
            if self.lambda_risk is None or self.lambda_risk < 0:
                raise ValueError(f"{self.kind.value} environment needs lambda_risk >= 0")
            if self.maxpos is not None:
                raise ValueError(f"maxpos is only valid for the maxpos environment")
            if self.barrier is not None:
                raise ValueError("barrier is only valid for the maxpos environment")
        else:
            if self.maxpos is None or self.maxpos <= 0:
                raise ValueError("maxpos environment needs maxpos > 0")
            if self.lambda_risk is not None:
                raise ValueError("lambda_risk is not used by the maxpos environment")
        if self.sigma_r < 0:
            raise ValueError(f"sigma_r must be >= 0, got {self.sigma_r}")
        if not self.noisy_rewards and self.sigma_r != 0:
            raise ValueError("sigma_r must be 0 unless noisy_rewards is set")

    @property
    def innovation_std(self) -> float:
        return float(np.sqrt(1.0 - self.rho**2))

    def perfect_information(self) -> "EnvParams":
        """Same environment with the return noise switched off."""
        return replace(self, noisy_rewards=False, sigma_r=0.0)

    def objective(self) -> "EnvParams":
        """Noise-free, barrier-free view used to score policies."""
        return replace(self.perfect_information(), barrier=None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvParams":
        d = dict(d)
        barrier = d.pop("barrier", None)
        if isinstance(barrier, dict):
            barrier = BarrierParams(**barrier)
        return cls(barrier=barrier, **d)


@dataclass(frozen=True)
class EnvState:
    position: float
    predictor: float
    step_index: int = 0
    horizon: int = 1

    @property
    def done(self) -> bool:
        return self.step_index >= self.horizon

    def as_array(self) -> np.ndarray:
        return np.array([self.position, self.predictor])


@dataclass(frozen=True)
class StepResult:
    reward: float
    pnl: float
    next_state: EnvState
    done: bool
    executed_action: float
    pnl_true: float = 0.0
    risk: float = 0.0
    barrier: float = 0.0


def predictor_step(p, rho: float, rng: Optional[np.random.Generator] = None, innovation=None):
    """Advance the AR(1) predictor, keeping its stationary variance at 1.

    ``innovation`` overrides the standard-normal draw (before scaling); pass
    0.0 to get the noiseless decay ``rho * p``.
    """
    if innovation is None:
        innovation = rng.standard_normal(np.shape(p))
    return rho * p + np.sqrt(1.0 - rho**2) * innovation


def predictor_paths(rho: float, n_episodes: int, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Stationary predictor paths, shape ``(horizon, n_episodes)``."""
    p = np.empty((horizon, n_episodes))
    p[0] = rng.standard_normal(n_episodes)
    eta = rng.standard_normal((horizon - 1, n_episodes)) * np.sqrt(1.0 - rho**2)
    for t in range(1, horizon):
        p[t] = rho * p[t - 1] + eta[t - 1]
    return p


def barrier_penalty(magnitude, maxpos: float, barrier: BarrierParams):
    return barrier.beta * (np.tanh(barrier.alpha * (magnitude - (1.0 + barrier.gamma) * maxpos)) + 1.0)


def reward_terms(params: EnvParams, position, action, gain):
    """Vectorised reward for trading ``action`` from ``position``.

    Returns ``(new_position, executed, reward, pnl, risk, barrier)``. The
    trading cost is charged on the executed (post-clipping) trade. ``gain``
    is the realised return multiplier (``p_t`` under perfect information).
    """
    target = position + action
    if params.kind is EnvKind.LIN_COST_MAXPOS:
        new = np.clip(target, -params.maxpos, params.maxpos)
    else:
        new = target
    executed = new - position
    if params.kind is EnvKind.QUAD_COST_QUAD_RISK:
        cost = params.gamma_cost * executed * executed
    else:
        cost = params.gamma_cost * np.abs(executed)
    pnl = new * gain - cost
    if params.kind.quadratic_risk:
        risk = params.lambda_risk * new * new
    else:
        risk = np.zeros_like(pnl)
    if params.kind is EnvKind.LIN_COST_MAXPOS and params.barrier is not None:
        barrier = barrier_penalty(np.abs(target), params.maxpos, params.barrier)
    else:
        barrier = np.zeros_like(pnl)
    reward = pnl - risk - barrier
    return new, executed, reward, pnl, risk, barrier


class TradingEnv:
    """Stateful, step-by-step environment; owns its random stream."""

    def __init__(self, params: EnvParams, horizon: int, rng: Optional[np.random.Generator] = None):
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        self.params = params
        self.horizon = int(horizon)
        self.rng = rng if rng is not None else np.random.default_rng(params.seed)
        self.state: Optional[EnvState] = None

    def reset(self) -> EnvState:
        p0 = float(self.rng.standard_normal())
        self.state = EnvState(0.0, p0, 0, self.horizon)
        return self.state

    def step(self, action: float) -> StepResult:
        state = self.state
        if state is None:
            raise RuntimeError("reset() must be called before step()")
        if state.done:
            raise RuntimeError("episode is over; call reset()")
        prm = self.params
        p = state.predictor
        gain = p
        if prm.noisy_rewards:
            gain = p + prm.sigma_r * float(self.rng.standard_normal())
        new, executed, reward, pnl, risk, barrier = reward_terms(prm, state.position, float(action), gain)
        pnl_true = float(new * p + (pnl - new * gain))
        p_next = float(predictor_step(p, prm.rho, self.rng))
        t = state.step_index + 1
        self.state = EnvState(float(new), p_next, t, self.horizon)
        return StepResult(
            reward=float(reward),
            pnl=float(pnl),
            next_state=self.state,
            done=t == self.horizon,
            executed_action=float(executed),
            pnl_true=pnl_true,
            risk=float(risk),
            barrier=float(barrier),
        )


@dataclass
class Trajectory:
    """One episode; row ``t`` holds the state seen at ``t`` and its outcome."""

    position: np.ndarray
    predictor: np.ndarray
    action: np.ndarray
    reward: np.ndarray
    pnl: np.ndarray
    next_position: np.ndarray = field(default=None)
    next_predictor: np.ndarray = field(default=None)

    @property
    def mean_reward(self) -> float:
        return float(self.reward.mean())

    @property
    def mean_pnl(self) -> float:
        return float(self.pnl.mean())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "pi", "p", "action", "reward", "pnl"])
            for t in range(len(self.reward)):
                w.writerow([t, repr(float(self.position[t])), repr(float(self.predictor[t])),
                            repr(float(self.action[t])), repr(float(self.reward[t])),
                            repr(float(self.pnl[t]))])


def rollout(policy: Callable, params: EnvParams, horizon: int,
            rng: Optional[np.random.Generator] = None) -> Trajectory:
    """Run one episode step by step; ``policy(position, predictor) -> trade``.

    The recorded action is the executed trade.
    """
    env = TradingEnv(params, horizon, rng)
    state = env.reset()
    cols = {k: np.empty(horizon) for k in ("pi", "p", "a", "r", "pnl", "pi1", "p1")}
    for t in range(horizon):
        res = env.step(float(policy(state.position, state.predictor)))
        cols["pi"][t] = state.position
        cols["p"][t] = state.predictor
        cols["a"][t] = res.executed_action
        cols["r"][t] = res.reward
        cols["pnl"][t] = res.pnl
        state = res.next_state
        cols["pi1"][t] = state.position
        cols["p1"][t] = state.predictor
    return Trajectory(cols["pi"], cols["p"], cols["a"], cols["r"], cols["pnl"], cols["pi1"], cols["p1"])


@dataclass
class SimulationResult:
    mean_reward: np.ndarray
    mean_pnl: np.ndarray
    mean_pnl_true: np.ndarray
    positions: Optional[np.ndarray] = None


def simulate(policy: Callable, params: EnvParams, paths: np.ndarray,
             return_noise: Optional[np.ndarray] = None, record_positions: bool = False) -> SimulationResult:
    """Vectorised rollout over pre-drawn predictor paths (time on axis 0).

    ``policy`` must accept arrays. Its output may broadcast against a path
    slice (e.g. shape ``(n_params, 1)`` against ``(n_episodes,)``), which
    evaluates a family of policies on common random numbers.

    Rewards are scored with the true predictor. ``return_noise`` only enters
    ``mean_pnl`` (realised returns); ``mean_pnl_true`` never sees it.
    ``positions`` holds the position after each trade.
    """
    horizon = paths.shape[0]
    p0 = paths[0]
    shape = np.broadcast(np.asarray(policy(np.zeros_like(p0), p0)), p0).shape
    position = np.zeros(shape)
    tot_r = np.zeros(shape)
    tot_pnl = np.zeros(shape)
    tot_noise = np.zeros(shape)
    held = np.empty((horizon,) + shape) if record_positions else None
    for t in range(horizon):
        p = paths[t]
        action = policy(position, p)
        new, _, reward, pnl, _, _ = reward_terms(params, position, action, p)
        tot_r += reward
        tot_pnl += pnl
        if return_noise is not None:
            tot_noise += new * return_noise[t]
        position = new
        if record_positions:
            held[t] = new
    return SimulationResult(tot_r / horizon, (tot_pnl + tot_noise) / horizon, tot_pnl / horizon, held)
