import numpy as np
import pytest

from detpo.agent import (AgentConfig, DDPGAgent, ExplorationNoise, TrainingDiverged, actor_policy, train)
from detpo.env import EnvParams
from detpo.reference import solve_lqr
from detpo.replay import PrioritizedBuffer, SampledBatch

LQR = EnvParams("lqr", gamma_cost=1.0, lambda_risk=0.3)
REF = solve_lqr(1.0, 0.3, 0.9)


def tiny(**kw):
    base = dict(hidden=(8, 8), pretrain_steps=200, episodes=2, episode_length=100, batch_size=16,
                eval_every=1, eval_episodes=1, eval_horizon=200, buffer_capacity=1000, discount=0.9,
                explore_rho=1.0, final_layer_scale=0.0, critic_warmup=100,
                position_bound=1e6)
    base.update(kw)
    return AgentConfig(**base)


def batch(n=4, rng=None, rewards=None):
    rng = rng or np.random.default_rng(0)
    return SampledBatch(indices=np.arange(n), states=rng.normal(size=(n, 2)), actions=rng.normal(size=n),
                        rewards=np.zeros(n) if rewards is None else rewards,
                        next_states=rng.normal(size=(n, 2)), dones=np.zeros(n, bool),
                        is_weights=np.ones(n), probabilities=np.full(n, 1.0 / n))


class TestNoise:
    def test_sigma_zero(self):
        n = ExplorationNoise(0.1, 0.0)
        rng = np.random.default_rng(0)
        assert all(n.step(rng) == 0.0 for _ in range(100))

    def test_iid_when_rho_one(self):
        n = ExplorationNoise(1.0, 0.3)
        x = np.array([n.step(np.random.default_rng(0)) for _ in range(3)])
        assert np.all(x == x[0])  # no memory: same draw, same output

    @pytest.mark.parametrize("rho", [0.1, 0.5, 1.0])
    def test_stationary_std(self, rho):
        n = ExplorationNoise(rho, 0.3)
        rng = np.random.default_rng(4)
        for _ in range(200):
            n.step(rng)
        m = 200_000
        x = np.array([n.step(rng) for _ in range(m)])
        # effective sample size of an AR(1) chain with coefficient 1 - rho
        phi = 1.0 - rho
        n_eff = m * (1 - phi**2) / (1 + phi**2)
        assert abs(x.std() - n.stationary_std) < 3 * n.stationary_std / np.sqrt(2 * n_eff)


class TestAgent:
    def test_zero_final_layer_acts_as_noise(self):
        ag = DDPGAgent(AgentConfig(final_layer_scale=0.0), np.random.default_rng(0))
        assert ag.act(1.0, -0.5) == 0.0
        assert ag.act(1.0, -0.5, noise=0.2) == 0.2

    def test_action_bounded(self):
        ag = DDPGAgent(AgentConfig(hidden=(8,)), np.random.default_rng(0))
        ag.actor.params[:] *= 1e4
        a = ag.policy(np.linspace(-50, 50, 101), np.linspace(-4, 4, 101))
        assert np.all(np.abs(a) <= 8.0)

    def test_discount_zero_targets_rewards(self):
        ag = DDPGAgent(AgentConfig(hidden=(4,), critic_lr=1e-3), np.random.default_rng(0))
        b = batch(rewards=np.array([1.0, -2.0, 0.5, 3.0]))
        q = ag.critic(np.hstack([b.states, b.actions[:, None]]))[:, 0]
        delta = ag.critic_update(b, discount=0.0)
        assert np.allclose(delta, q - b.rewards)

    def test_null_critic_zero_loss(self):
        ag = DDPGAgent(AgentConfig(hidden=(4,)), np.random.default_rng(0))
        ag.critic.params[:] = 0.0
        ag.target_critic.params[:] = 0.0
        before = ag.critic.params.copy()
        ag.critic_update(batch())
        assert ag.last_critic_loss == 0.0 and np.array_equal(ag.critic.params, before)

    def test_single_sample_loss(self):
        ag = DDPGAgent(AgentConfig(hidden=(4,)), np.random.default_rng(1))
        b = batch(1, rewards=np.array([0.7]))
        delta = ag.critic_update(b, discount=0.0)
        assert ag.last_critic_loss == pytest.approx(delta[0] ** 2)

    def test_terminal_masking_flag(self):
        cfg = AgentConfig(hidden=(4,), bootstrap_terminal=False)
        ag = DDPGAgent(cfg, np.random.default_rng(0))
        b = batch(2, rewards=np.array([1.0, 1.0]))
        b.dones[:] = True
        q = ag.critic(np.hstack([b.states, b.actions[:, None]]))[:, 0]
        assert np.allclose(ag.critic_update(b), q - 1.0)

    def test_flat_critic_leaves_actor(self):
        ag = DDPGAgent(AgentConfig(hidden=(4,)), np.random.default_rng(0))
        # zero weights on the action input and everything after the first layer: Q constant in a
        ag.critic.weights[0][2, :] = 0.0
        before = ag.actor.params.copy()
        ag.actor_update(batch())
        assert np.allclose(ag.actor.params, before, atol=1e-12)

    def test_actor_update_isolated(self):
        ag = DDPGAgent(AgentConfig(hidden=(4,)), np.random.default_rng(0))
        before = ag.critic.params.copy()
        ag.actor_update(batch())
        assert np.array_equal(ag.critic.params, before)

    def test_stub_critic_pulls_actor_to_one(self):
        cfg = AgentConfig(hidden=(8,), actor_lr=1e-2, max_trade=3.0)
        ag = DDPGAgent(cfg, np.random.default_rng(0))
        # Q(s, a) = -(a - 1)^2 exposed through the forward/backward interface

        class Stub:
            def forward(self, x):
                return -(x[:, 2:3] - 1.0) ** 2, x

            def backward(self, tape, g, need_params=True):
                out = np.zeros_like(tape)
                out[:, 2] = g[:, 0] * -2.0 * (tape[:, 2] - 1.0)
                return type("G", (), {"inputs": out})()

        ag.critic = Stub()
        s = np.random.default_rng(1).normal(size=(32, 2))
        b = batch(32)
        b = SampledBatch(b.indices, s, b.actions, b.rewards, b.next_states, b.dones, b.is_weights,
                         b.probabilities)
        for _ in range(1500):
            ag.actor_update(b)
        assert np.allclose(ag.actor(s)[:, 0], 1.0, atol=0.05)

    def test_target_lag(self):
        ag = DDPGAgent(AgentConfig(hidden=(4,), tau_critic=0.1, tau_actor=0.2), np.random.default_rng(0))
        ag.target_actor.params[:] += 1.0
        ag.target_critic.params[:] -= 1.0
        ga = np.max(np.abs(ag.target_actor.params - ag.actor.params))
        gc = np.max(np.abs(ag.target_critic.params - ag.critic.params))
        ag.update_targets()
        assert np.max(np.abs(ag.target_actor.params - ag.actor.params)) == pytest.approx(0.8 * ga)
        assert np.max(np.abs(ag.target_critic.params - ag.critic.params)) == pytest.approx(0.9 * gc)

    def test_tick_order_and_priority_update(self):
        cfg = AgentConfig(hidden=(4,), batch_size=8)
        ag = DDPGAgent(cfg, np.random.default_rng(0))
        events = []
        ag.hooks.append(events.append)
        buf = PrioritizedBuffer(64)
        rng = np.random.default_rng(0)
        for _ in range(20):
            buf.insert(rng.normal(size=2), rng.normal(), rng.normal(), rng.normal(size=2))
        calls = []
        orig = buf.update_priorities

        def spy(idx, d):
            calls.append(np.array(idx))
            orig(idx, d)
        buf.update_priorities = spy
        b = ag.learn(buf, 0.4, rng)
        assert events == ["critic", "actor", "priorities", "targets"]
        assert len(calls) == 1 and np.array_equal(calls[0], b.indices)
        assert b.indices.max() < len(buf)


class TestTrain:
    def test_episodes_zero(self):
        cfg = tiny(episodes=0)
        ag = train(LQR, cfg)
        fresh = DDPGAgent(cfg, np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[0]))
        assert ag.history == [] and ag.best_actor is None
        assert np.array_equal(ag.actor.params, fresh.actor.params)

    def test_deterministic(self):
        a = train(LQR, tiny(), REF)
        b = train(LQR, tiny(), REF)
        assert a.history == b.history
        assert np.array_equal(a.actor.params, b.actor.params)
        c = train(LQR, tiny(seed=1), REF)
        assert not np.array_equal(a.actor.params, c.actor.params)

    def test_history_and_selection(self):
        ag = train(LQR, tiny(episodes=3), REF)
        assert [r["episode"] for r in ag.history] == [1, 2, 3]
        best = max(ag.history, key=lambda r: r["eval_reward"])
        assert ag.best_episode == best["episode"]
        assert np.allclose(actor_policy(ag.best_actor)(0.3, 0.2), ag.selected_policy(0.3, 0.2))

    def test_hook_sequence_in_training(self):
        events = []
        train(LQR, tiny(episodes=1, critic_warmup=0), REF, hooks=[events.append])
        assert len(events) % 4 == 0 and events[:4] == ["critic", "actor", "priorities", "targets"]
        assert events[::4] == ["critic"] * (len(events) // 4)

    def test_critic_warmup_skips_actor(self):
        events = []
        train(LQR, tiny(episodes=1, critic_warmup=10), REF, hooks=[events.append])
        assert events[:30] == ["critic", "priorities", "targets"] * 10
        assert events[30:34] == ["critic", "actor", "priorities", "targets"]

    def test_runaway_detected(self):
        cfg = tiny(position_bound=1.0, explore_sigma=2.0, explore_rho=0.01)
        with pytest.raises(TrainingDiverged) as info:
            train(LQR, cfg, REF)
        assert info.value.episode == 1 and info.value.agent.diverged

    def test_maxpos_overshoot_detected(self):
        env = EnvParams("maxpos", gamma_cost=4.0, maxpos=2.0)
        # with no tolerance, a single deterministic trade past the cap aborts the run
        cfg = tiny(overshoot_limit=0.0, final_layer_scale=1.0, hidden_activation="tanh")
        with pytest.raises(TrainingDiverged) as info:
            train(env, cfg, lambda pi, p: 0 * pi)
        assert "position cap" in info.value.reason
