"""DDPG with prioritized replay for the single-asset trading environments."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .env import EnvKind, EnvParams, TradingEnv
from .harness import EvalReport, evaluate
from .nn import Adam, MlpNet, NonFiniteError, soft_update
from .reference import solve_reference
from .replay import PrioritizedBuffer, SampledBatch, anneal_beta

__all__ = [
    "AgentConfig",
    "ExplorationNoise",
    "DDPGAgent",
    "TrainedAgent",
    "TrainingDiverged",
    "train",
]

log = logging.getLogger(__name__)


@dataclass
class AgentConfig:
    discount: float = 0.99
    update_period: int = 1
    batch_size: int = 64
    tau_critic: float = 5e-3
    tau_actor: float = 5e-3
    pretrain_steps: int = 5000
    episodes: int = 300
    episode_length: int = 1000
    explore_rho: float = 0.1
    explore_sigma: float = 0.3
    max_trade: float = 8.0
    buffer_capacity: int = 100_000
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_epsilon: float = 1e-3
    per_initial_priority: float = 1.0
    hidden: tuple = (64, 64)
    hidden_activation: str = "relu"
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    final_layer_scale: float = 1e-2
    critic_warmup: int = 0
    bootstrap_terminal: bool = True
    position_bound: float = 50.0
    overshoot_limit: float = 0.5
    eval_every: int = 10
    eval_episodes: int = 10
    eval_horizon: int = 5000
    eval_seed: int = 10_007
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("discount", "tau_critic", "tau_actor"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {v}")
        if not 0.0 < self.explore_rho <= 1.0:
            raise ValueError("explore_rho must lie in (0, 1]")
        if self.explore_sigma < 0:
            raise ValueError("explore_sigma must be >= 0")
        for name in ("update_period", "batch_size", "episode_length", "buffer_capacity",
                     "eval_every", "eval_episodes", "eval_horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("pretrain_steps", "episodes"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.max_trade <= 0:
            raise ValueError("max_trade must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown agent settings: {sorted(unknown)}")
        return cls(**d)


class ExplorationNoise:
    """Autoregressive action noise ``eta <- (1 - rho) eta + sigma * N(0, 1)``."""

    def __init__(self, rho: float, sigma: float):
        self.rho = rho
        self.sigma = sigma
        self.state = 0.0

    def reset(self):
        self.state = 0.0

    def step(self, rng: np.random.Generator) -> float:
        self.state = (1.0 - self.rho) * self.state + self.sigma * rng.standard_normal()
        return self.state

    @property
    def stationary_std(self) -> float:
        return self.sigma / np.sqrt(1.0 - (1.0 - self.rho) ** 2)


class TrainingDiverged(RuntimeError):
    def __init__(self, episode: int, reason: str, agent: "TrainedAgent"):
        super().__init__(f"training diverged in episode {episode}: {reason}")
        self.episode = episode
        self.reason = reason
        self.agent = agent


class DDPGAgent:
    def __init__(self, config: AgentConfig, rng: Optional[np.random.Generator] = None):
        self.config = config
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        c = config
        self.actor = MlpNet((2, *c.hidden, 1), c.hidden_activation, "scaled_tanh", c.max_trade,
                            rng=rng, final_layer_scale=c.final_layer_scale)
        self.critic = MlpNet((3, *c.hidden, 1), c.hidden_activation, "linear", rng=rng)
        self.target_actor = self.actor.copy()
        self.target_critic = self.critic.copy()
        self.actor_opt = Adam(self.actor, c.actor_lr, c.adam_beta1, c.adam_beta2, c.adam_eps)
        self.critic_opt = Adam(self.critic, c.critic_lr, c.adam_beta1, c.adam_beta2, c.adam_eps)
        self.last_critic_loss = 0.0
        self.hooks: list[Callable[[str], None]] = []

    def _emit(self, event: str):
        for hook in self.hooks:
            hook(event)

    def act(self, position: float, predictor: float, noise: float = 0.0) -> float:
        return float(self.actor(np.array([position, predictor]))[0]) + noise

    def policy(self, position, predictor):
        """Deterministic, vectorised policy ``(positions, predictors) -> trades``."""
        return actor_policy(self.actor)(position, predictor)

    def critic_update(self, batch: SampledBatch, discount: Optional[float] = None) -> np.ndarray:
        """One weighted TD step on the critic; returns ``Q(s, a) - target`` per sample."""
        gamma = self.config.discount if discount is None else discount
        a_next = self.target_actor(batch.next_states)
        q_next = self.target_critic(np.hstack([batch.next_states, a_next]))[:, 0]
        boot = gamma * q_next
        if not self.config.bootstrap_terminal:
            boot = np.where(batch.dones, 0.0, boot)
        target = batch.rewards + boot
        q, tape = self.critic.forward(np.hstack([batch.states, batch.actions[:, None]]))
        delta = q[:, 0] - target
        b = len(batch)
        w = batch.is_weights
        self.last_critic_loss = float(np.sum(w * delta * delta) / b)
        if not np.isfinite(self.last_critic_loss):
            raise NonFiniteError("critic loss is not finite")
        grads = self.critic.backward(tape, (2.0 * w * delta / b)[:, None])
        self.critic_opt.step(self.critic, grads)
        self._emit("critic")
        return delta

    def actor_update(self, batch: SampledBatch) -> None:
        """Ascend ``mean Q(s, actor(s))`` through the critic's action gradient."""
        s = batch.states
        b = len(s)
        a, atape = self.actor.forward(s)
        _, ctape = self.critic.forward(np.hstack([s, a]))
        dq = self.critic.backward(ctape, np.full((b, 1), -1.0 / b), need_params=False)
        grads = self.actor.backward(atape, dq.inputs[:, 2:])
        self.actor_opt.step(self.actor, grads)
        self._emit("actor")

    def update_targets(self) -> None:
        soft_update(self.target_critic, self.critic, self.config.tau_critic)
        soft_update(self.target_actor, self.actor, self.config.tau_actor)
        self._emit("targets")

    def learn(self, buffer: PrioritizedBuffer, beta: float, rng: np.random.Generator,
              update_actor: bool = True) -> SampledBatch:
        """One update tick: critic, actor, priorities, then target blending."""
        batch = buffer.sample(self.config.batch_size, beta, rng)
        delta = self.critic_update(batch)
        if update_actor:
            self.actor_update(batch)
        buffer.update_priorities(batch.indices, delta)
        self._emit("priorities")
        self.update_targets()
        return batch


def actor_policy(actor: MlpNet) -> Callable:
    def policy(position, predictor):
        pi, p = np.broadcast_arrays(np.asarray(position, float), np.asarray(predictor, float))
        x = np.stack([pi.ravel(), p.ravel()], axis=1)
        return actor(x)[:, 0].reshape(pi.shape)
    return policy


@dataclass
class TrainedAgent:
    actor: MlpNet
    critic: MlpNet
    target_actor: MlpNet
    target_critic: MlpNet
    config: AgentConfig
    history: list = field(default_factory=list)
    best_actor: Optional[MlpNet] = None
    best_episode: int = 0
    diverged: bool = False
    diverged_episode: Optional[int] = None
    divergence_reason: str = ""

    @property
    def policy(self) -> Callable:
        return actor_policy(self.actor)

    @property
    def selected_policy(self) -> Callable:
        """Actor snapshot with the best validation reward (final actor if none)."""
        return actor_policy(self.best_actor if self.best_actor is not None else self.actor)

    def nets(self) -> dict:
        out = {"actor": self.actor, "critic": self.critic,
               "target_actor": self.target_actor, "target_critic": self.target_critic}
        if self.best_actor is not None:
            out["best_actor"] = self.best_actor
        return out


HISTORY_COLUMNS = ["episode", "train_reward", "train_pnl", "eval_reward", "eval_pnl", "eval_diff",
                   "overshoot"]


def _snapshot(agent: DDPGAgent, config: AgentConfig, history, best, best_ep) -> TrainedAgent:
    return TrainedAgent(agent.actor.copy(), agent.critic.copy(), agent.target_actor.copy(),
                        agent.target_critic.copy(), config, list(history),
                        best.copy() if best is not None else None, best_ep)


def _overshoot_margin(params: EnvParams) -> float:
    gamma = params.barrier.gamma if params.barrier is not None else 0.25
    return (1.0 + gamma) * params.maxpos


def train(env_params: EnvParams, config: AgentConfig, reference_policy: Optional[Callable] = None,
          hooks: Optional[list] = None, progress: Optional[Callable[[dict], None]] = None) -> TrainedAgent:
    """Run pretraining and ``config.episodes`` training episodes.

    Raises :class:`TrainingDiverged` (carrying the partial agent) on NaN/Inf,
    on position runaway beyond ``position_bound`` (quadratic-risk kinds), or,
    for the maxpos kind, when more than ``overshoot_limit`` of an episode's
    deterministic trades request a position beyond the barrier margin.
    """
    c = config
    streams = np.random.SeedSequence(c.seed).spawn(4)
    init_rng, env_rng, noise_rng, replay_rng = (np.random.default_rng(s) for s in streams)
    agent = DDPGAgent(c, init_rng)
    agent.hooks.extend(hooks or [])
    env = TradingEnv(env_params, c.episode_length, env_rng)
    buffer = PrioritizedBuffer(c.buffer_capacity, 2, c.per_alpha, c.per_epsilon, c.per_initial_priority)
    noise = ExplorationNoise(c.explore_rho, c.explore_sigma)
    maxpos = env_params.kind is EnvKind.LIN_COST_MAXPOS
    history: list[dict] = []
    best_actor, best_ep, best_val = None, 0, -np.inf

    if c.episodes == 0:
        return _snapshot(agent, c, history, None, 0)

    if reference_policy is None and c.eval_every <= c.episodes:
        reference_policy, _ = solve_reference(env_params.objective())

    def fail(episode, reason):
        snap = _snapshot(agent, c, history, best_actor, best_ep)
        snap.diverged, snap.diverged_episode, snap.divergence_reason = True, episode, reason
        raise TrainingDiverged(episode, reason, snap)

    actor = agent.actor
    x = np.zeros(2)

    # pretraining fill with the initial policy plus noise
    state = env.reset()
    noise.reset()
    for _ in range(c.pretrain_steps):
        if state.done:
            state = env.reset()
            noise.reset()
        x[0], x[1] = state.position, state.predictor
        a = float(actor(x)[0]) + noise.step(noise_rng)
        res = env.step(a)
        nxt = res.next_state
        buffer.insert(x, a, res.reward, (nxt.position, nxt.predictor), res.done, priority=abs(res.reward))
        state = nxt

    total_steps = c.episodes * c.episode_length
    step = 0
    ticks = 0
    margin = _overshoot_margin(env_params) if maxpos else np.inf
    t0 = time.perf_counter()
    for episode in range(1, c.episodes + 1):
        state = env.reset()
        noise.reset()
        sum_r = sum_pnl = 0.0
        overshoot = 0
        try:
            for t in range(1, c.episode_length + 1):
                x[0], x[1] = state.position, state.predictor
                a_pred = float(actor(x)[0])
                if not np.isfinite(a_pred):
                    raise NonFiniteError("actor output is not finite")
                a = a_pred + noise.step(noise_rng)
                if abs(state.position + a_pred) > margin:
                    overshoot += 1
                res = env.step(a)
                nxt = res.next_state
                buffer.insert(x, a, res.reward, (nxt.position, nxt.predictor), res.done)
                sum_r += res.reward
                sum_pnl += res.pnl
                if not maxpos and abs(nxt.position) > c.position_bound:
                    fail(episode, f"|position| exceeded {c.position_bound}")
                step += 1
                if t % c.update_period == 0 and len(buffer) >= c.batch_size:
                    agent.learn(buffer, anneal_beta(step, total_steps, c.per_beta0), replay_rng,
                                update_actor=ticks >= c.critic_warmup)
                    ticks += 1
                state = nxt
        except (NonFiniteError, FloatingPointError) as exc:
            fail(episode, str(exc))
        row = {"episode": episode, "train_reward": sum_r / c.episode_length,
               "train_pnl": sum_pnl / c.episode_length, "eval_reward": np.nan,
               "eval_pnl": np.nan, "eval_diff": np.nan, "overshoot": overshoot / c.episode_length}
        history.append(row)
        if maxpos and row["overshoot"] > c.overshoot_limit:
            fail(episode, f"{row['overshoot']:.0%} of trades pushed past the position cap")
        if episode % c.eval_every == 0 or episode == c.episodes:
            rep = evaluate(actor_policy(actor), reference_policy, env_params, c.eval_episodes,
                           c.eval_horizon, c.eval_seed)
            row.update(eval_reward=rep.mean_reward, eval_pnl=rep.mean_pnl, eval_diff=rep.diff_l1)
            if not np.isfinite(rep.mean_reward):
                fail(episode, "evaluation reward is not finite")
            if rep.mean_reward > best_val:
                best_val, best_ep, best_actor = rep.mean_reward, episode, actor.copy()
            log.info("seed %d episode %d: eval reward %.4f pnl %.4f diff %.3f (%.0fs)", c.seed, episode,
                     rep.mean_reward, rep.mean_pnl, rep.diff_l1, time.perf_counter() - t0)
        if progress is not None:
            progress(row)

    return _snapshot(agent, c, history, best_actor, best_ep)
