import numpy as np
import pytest
from gradcheck import actor_gradient_error, critic_gradient_error, filled_agent

from cnfp.agents import (
    VARIANTS,
    CheckpointError,
    ReplayBuffer,
    SacAgent,
    SacConfig,
    lagrange_update,
    penalty_reward,
    temperature_gradient,
)


def test_penalty_reward_semantics():
    assert penalty_reward(-3.0, [False, False]) == -3.0
    assert penalty_reward(-3.0, [True, False]) == -103.0
    assert penalty_reward(-3.0, [True, True]) == -103.0


def test_lagrange_multiplier_steps():
    assert lagrange_update([0.0], [0.0], [0.0], 0.05).tolist() == [0.0]
    lam = np.zeros(1)
    for k in range(1, 4):
        lam = lagrange_update(lam, [1.0], [0.0], 0.05, lam_max=0.12)
        assert lam[0] == pytest.approx(min(0.05 * k, 0.12))


def test_temperature_gradient_signs():
    assert temperature_gradient(0.0, np.full(8, 2.0), -2.0) == 0.0
    # Entropy too low (log pi high): descending the gradient raises alpha.
    assert temperature_gradient(np.log(0.2), np.full(8, 3.0), -2.0) < 0.0


def test_disabled_temperature_is_constant():
    agent = SacAgent("unconstrained", SacConfig(auto_alpha=False, init_alpha=0.3))
    agent.temperature_update(np.full(4, 10.0))
    assert agent.alpha == pytest.approx(0.3)


def test_undiscounted_target_reduces_to_reward():
    agent = filled_agent("unconstrained")
    agent.config = SacConfig(gamma=0.0, hidden=(8, 8))
    batch = agent.buffer.sample(8, np.random.default_rng(0))
    target, _ = agent.critic_targets_for(batch)
    np.testing.assert_array_equal(target, batch["reward"])


def test_penalty_variant_shapes_the_stored_reward():
    agent = filled_agent("penalty")
    batch = agent.buffer.sample(64, np.random.default_rng(0))
    shaped = agent.shaped_reward(batch)
    hit = batch["costs"].max(axis=1) > 0
    np.testing.assert_array_equal(shaped[hit], batch["reward"][hit] - 100.0)
    np.testing.assert_array_equal(shaped[~hit], batch["reward"][~hit])


@pytest.mark.parametrize("variant", VARIANTS)
def test_actor_gradient_matches_finite_differences(variant):
    assert actor_gradient_error(variant) <= 1e-4


@pytest.mark.parametrize("variant", ["unconstrained", "lagrangian"])
def test_critic_gradient_matches_finite_differences(variant):
    assert critic_gradient_error(variant) <= 1e-4


class QuadraticCritic:
    """Q(s, a) = -|a - target|^2 on the critic's scaled action input."""

    def __init__(self, target):
        self.target = np.asarray(target)

    def forward_cached(self, x):
        d = x[:, 5:] - self.target
        return -np.sum(d * d, axis=1, keepdims=True), d

    def backward(self, d, g, param_grads=True):
        gx = np.zeros((len(d), 7))
        gx[:, 5:] = -2.0 * d * g
        return None, gx


def test_actor_ascends_a_quadratic_critic():
    agent = filled_agent("unconstrained")
    agent.log_alpha = -np.inf
    goal = np.array([0.6, -0.4])
    agent.critics = [QuadraticCritic(goal), QuadraticCritic(goal)]
    batch = agent.buffer.sample(32, np.random.default_rng(0))
    noise = np.zeros((32, 2))
    y, _, _, _ = agent.policy.sample(batch["obs"], noise=noise)
    _, grads, _, _ = agent.actor_loss_and_grads(batch, noise=noise)
    # The mean head's bias: descent must move actions toward the maximiser.
    step = -grads[-1][:2]
    expected = np.mean(goal - y, axis=0)
    assert np.all(np.sign(step) == np.sign(expected))


def test_variants_differ_only_where_declared():
    descriptions = {v: SacAgent(v).describe() for v in VARIANTS}
    assert descriptions["cnfp"]["flow"] != descriptions["unconstrained"]["flow"]
    assert descriptions["penalty"]["reward_penalty"]
    assert descriptions["lagrangian"]["cost_critics"] == 2
    assert len({d["actor_update"] for d in descriptions.values()}) == 1
    assert len({d["critic_update"] for d in descriptions.values()}) == 1
    with pytest.raises(ValueError):
        SacAgent("ppo")


def test_policy_log_prob_agrees_with_sampling():
    agent = filled_agent("cnfp")
    batch = agent.buffer.sample(50, np.random.default_rng(0))
    y, logp, _, _ = agent.policy.sample(batch["obs"], np.random.default_rng(1))
    np.testing.assert_allclose(agent.policy.log_prob(batch["obs"], y), logp, rtol=1e-6, atol=1e-6)
    outside = np.tile([[0.0, 0.0]], (50, 1)) + 5.0
    assert np.all(np.isneginf(agent.policy.log_prob(batch["obs"], outside)))


def test_non_finite_update_is_skipped_without_touching_weights():
    agent = filled_agent("unconstrained")
    agent.buffer.reward[:] = np.nan
    before = [p.copy() for p in agent.policy.actor.params]
    assert agent.update() is None
    assert agent.skipped_updates == 1 and agent.diagnostics
    for a, b in zip(before, agent.policy.actor.params):
        np.testing.assert_array_equal(a, b)


def test_update_runs_for_every_variant():
    for v in VARIANTS:
        record = filled_agent(v).update()
        assert record is not None and np.isfinite(record["critic_loss"])


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    agent = filled_agent("lagrangian")
    for _ in range(3):
        agent.update()
    path = tmp_path / "agent.npz"
    agent.save(path)
    other = SacAgent.load(path)
    for a, b in zip(agent._networks().values(), other._networks().values()):
        for p, q in zip(a.params, b.params):
            np.testing.assert_array_equal(p, q)
    assert other.lambdas.tolist() == agent.lambdas.tolist()
    assert other.log_alpha == agent.log_alpha
    np.testing.assert_array_equal(agent.update()["critic_loss"], other.update()["critic_loss"])


def test_checkpoint_version_mismatch(tmp_path):
    path = tmp_path / "agent.npz"
    SacAgent("cnfp").save(path)
    with np.load(path) as data:
        arrays = dict(data)
    arrays["meta"] = np.array(str(arrays["meta"]).replace('"version": 1', '"version": 99'))
    np.savez(path, **arrays)
    with pytest.raises(CheckpointError):
        SacAgent.load(path)


def test_replay_buffer_wraps_around():
    buf = ReplayBuffer(3)
    for i in range(5):
        buf.add(np.full(5, i), np.zeros(2), float(i), np.zeros(5), False, np.zeros(2))
    assert len(buf) == 3
    assert sorted(buf.reward.tolist()) == [2.0, 3.0, 4.0]
    batch = buf.sample(10, np.random.default_rng(0))
    assert batch["obs"].shape == (10, 5) and set(batch["reward"]) <= {2.0, 3.0, 4.0}
    with pytest.raises(ValueError):
        ReplayBuffer(2).sample(1, np.random.default_rng(0))
