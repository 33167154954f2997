"""Test cases for the TD3 agent with a critic ensemble."""
from pathlib import Path
from typing import Any
from typing import Callable
from typing import List
from typing import Sequence

import numpy as np
import pytest
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from adaptive_td3bc.agent import AgentParams
from adaptive_td3bc.agent import Batch
from adaptive_td3bc.agent import TD3BCAgent
from adaptive_td3bc.agent import actor_gradients
from adaptive_td3bc.agent import actor_update
from adaptive_td3bc.agent import compute_critic_target
from adaptive_td3bc.agent import critic_update
from adaptive_td3bc.agent import init_agent
from adaptive_td3bc.agent import polyak_update
from adaptive_td3bc.agent import qbar_normalize
from adaptive_td3bc.agent import select_action
from adaptive_td3bc.config import AgentConfig
from adaptive_td3bc.envs import EnvSpec
from adaptive_td3bc.envs import make_spec
from adaptive_td3bc.exceptions import CheckpointFormatError
from adaptive_td3bc.nn import AdamState
from adaptive_td3bc.nn import DenseNet
from adaptive_td3bc.nn import finite_diff_check
from adaptive_td3bc.nn import net_backward
from adaptive_td3bc.nn import net_forward


def _config(**overrides: Any) -> AgentConfig:
    values = {"hidden": (8, 8), "n_critics": 3, "target_subset": 2, "batch_size": 16}
    values.update(overrides)
    return AgentConfig(**values)


def _batch(spec: EnvSpec, size: int = 16, seed: int = 0) -> Batch:
    rng = np.random.default_rng(seed)
    return Batch(
        obs=rng.normal(size=(size, spec.obs_dim)),
        actions=rng.uniform(-1.0, 1.0, size=(size, spec.act_dim)),
        rewards=rng.normal(size=size),
        next_obs=rng.normal(size=(size, spec.obs_dim)),
        terminals=(rng.random(size) < 0.2).astype(float),
    )


def _constant_critic(spec: EnvSpec, value: float) -> DenseNet:
    net = DenseNet.zeros((spec.obs_dim + spec.act_dim, 1))
    net.params[1][0] = value
    return net


def test_select_action_without_noise(pointmass: EnvSpec) -> None:
    """It returns exactly the actor output when sigma is 0."""
    actor = init_agent(pointmass, _config(dtype="float64"), seed=0).actor
    obs = np.array([0.1, -0.2, 0.3, 0.0])
    action = select_action(actor, obs, 0.0, None, pointmass.low, pointmass.high)
    assert np.array_equal(action, actor(obs))


def test_select_action_stays_in_bounds(pointmass: EnvSpec) -> None:
    """It clips noisy actions into the box."""
    actor = init_agent(pointmass, _config(), seed=0).actor
    obs = np.zeros((1000, 4))
    rng = np.random.default_rng(0)
    actions = select_action(actor, obs, 5.0, rng, pointmass.low, pointmass.high)
    assert np.all(actions >= -1.0) and np.all(actions <= 1.0)


def test_exploration_noise_has_the_requested_scale(pointmass: EnvSpec) -> None:
    """It adds Gaussian noise whose sample std is within 2% of sigma."""
    actor = init_agent(pointmass, _config(dtype="float64"), seed=0).actor
    obs = np.zeros((100_000, 4))
    loose = np.full(2, 1e9)
    actions = select_action(actor, obs, 0.3, np.random.default_rng(1), -loose, loose)
    noise = actions - actor(obs)
    assert np.all(np.abs(noise.std(axis=0) / 0.3 - 1.0) < 0.02)


def test_zero_discount_target_is_reward(pointmass: EnvSpec) -> None:
    """It returns the reward itself when gamma is 0."""
    config = _config(gamma=0.0)
    params = init_agent(pointmass, config, seed=1)
    batch = _batch(pointmass)
    target = compute_critic_target(
        batch, params.target_actor, params.target_critics, config,
        np.random.default_rng(0), pointmass,
    )
    assert np.array_equal(target.values, batch.rewards)


def test_target_takes_the_subset_minimum(pointmass: EnvSpec) -> None:
    """It evaluates 0.5 + 0.99 * min(1, 3) = 1.49 for critics 1 and 3 of [1, 2, 3]."""
    config = _config(gamma=0.99)
    actor = init_agent(pointmass, config, seed=0).actor
    critics = [_constant_critic(pointmass, value) for value in (1.0, 2.0, 3.0)]
    batch = _batch(pointmass, size=1)
    batch.rewards = np.array([0.5])
    batch.terminals = np.array([0.0])
    target = compute_critic_target(
        batch, actor, critics, config, np.random.default_rng(0), pointmass, None, [0, 2]
    )
    assert target.values[0] == pytest.approx(1.49, abs=1e-12)
    batch.terminals = np.array([1.0])
    done = compute_critic_target(
        batch, actor, critics, config, np.random.default_rng(0), pointmass, None, [0, 2]
    )
    assert done.values[0] == 0.5


def test_whole_subset_equals_full_min(pointmass: EnvSpec) -> None:
    """It gives exactly the full-minimum target when M equals N."""
    redq = _config(n_critics=3, target_subset=3)
    full = _config(n_critics=3, target_subset=2, ensemble_mode="full_min")
    params = init_agent(pointmass, redq, seed=2)
    batch = _batch(pointmass)
    first = compute_critic_target(
        batch, params.target_actor, params.target_critics, redq,
        np.random.default_rng(5), pointmass, np.random.default_rng(6),
    )
    second = compute_critic_target(
        batch, params.target_actor, params.target_critics, full,
        np.random.default_rng(5), pointmass, np.random.default_rng(6),
    )
    assert np.array_equal(first.values, second.values)
    assert sorted(first.subset.tolist()) == [0, 1, 2]


@settings(max_examples=40, deadline=None)
@given(
    n_critics=st.integers(min_value=2, max_value=6),
    seed=st.integers(min_value=0, max_value=10_000),
    per_sample=st.booleans(),
)
def test_pair_target_never_below_full_min(
    n_critics: int, seed: int, per_sample: bool
) -> None:
    """It never undercuts the full-ensemble minimum, per transition."""
    spec = make_spec("pointmass")
    pair = _config(n_critics=n_critics, target_subset=2, per_sample_subset=per_sample)
    full = _config(n_critics=n_critics, ensemble_mode="full_min")
    params = init_agent(spec, pair, seed=seed)
    batch = _batch(spec, seed=seed)
    paired = compute_critic_target(
        batch, params.target_actor, params.target_critics, pair,
        np.random.default_rng(seed), spec, np.random.default_rng(seed + 1),
    )
    minimum = compute_critic_target(
        batch, params.target_actor, params.target_critics, full,
        np.random.default_rng(seed), spec,
    )
    assert np.all(paired.values >= minimum.values)


@pytest.mark.slow
def test_targets_against_an_all_critic_oracle() -> None:
    """It matches, bounds and zero-discounts the all-critic minimum on 1000 cases."""
    spec = make_spec("pointmass")
    rng = np.random.default_rng(11)
    for case in range(1000):
        n_critics = int(rng.integers(2, 7))
        gamma = float(rng.uniform(0.5, 1.0))
        whole = _config(n_critics=n_critics, target_subset=n_critics, gamma=gamma)
        pair = _config(
            n_critics=n_critics,
            target_subset=2,
            gamma=gamma,
            per_sample_subset=bool(rng.random() < 0.5),
        )
        undiscounted = _config(n_critics=n_critics, gamma=0.0)
        params = init_agent(spec, whole, seed=case)
        batch = _batch(spec, size=int(rng.integers(1, 33)), seed=case)
        nets = (params.target_actor, params.target_critics)

        exhaustive = compute_critic_target(
            batch, *nets, whole, np.random.default_rng(case), spec
        )
        inputs = np.concatenate([batch.next_obs, exhaustive.next_actions], axis=-1)
        q_all = np.stack([critic(inputs)[:, 0] for critic in params.target_critics])
        q_min = q_all.astype(np.float64).min(axis=0)
        oracle = batch.rewards + gamma * (1.0 - batch.terminals) * q_min
        assert np.array_equal(exhaustive.values, oracle)

        paired = compute_critic_target(
            batch, *nets, pair, np.random.default_rng(case), spec,
            np.random.default_rng(case + 1),
        )
        assert np.all(paired.values >= oracle)

        flat = compute_critic_target(
            batch, *nets, undiscounted, np.random.default_rng(case), spec
        )
        assert np.array_equal(flat.values, batch.rewards)


def test_critics_at_target_do_not_move(pointmass: EnvSpec) -> None:
    """It leaves critics unchanged when every residual is zero."""
    config = _config(gamma=0.99, dtype="float64")
    params = init_agent(pointmass, config, seed=0)
    for critic in params.critics + params.target_critics:
        critic.set_params([np.zeros_like(p) for p in critic.params])
    batch = _batch(pointmass)
    batch.rewards = np.zeros(len(batch))
    loss = critic_update(batch, params, config, np.random.default_rng(0), pointmass)
    assert loss == 0.0
    assert all(not np.any(p) for critic in params.critics for p in critic.params)


def test_reported_loss_is_mean_squared_residual(pointmass: EnvSpec) -> None:
    """It reports the mean over critics and transitions of the squared residual."""
    config = _config(dtype="float64")
    params = init_agent(pointmass, config, seed=3)
    batch = _batch(pointmass)
    target = compute_critic_target(
        batch, params.target_actor, params.target_critics, config,
        np.random.default_rng(4), pointmass,
    )
    inputs = np.concatenate([batch.obs, batch.actions], axis=1)
    expected = np.mean(
        [
            np.mean((critic(inputs)[:, 0] - target.values) ** 2)
            for critic in params.critics
        ]
    )
    loss = critic_update(batch, params, config, np.random.default_rng(4), pointmass)
    assert loss == pytest.approx(expected, rel=1e-12)


def test_single_linear_critic_step(pointmass: EnvSpec) -> None:
    """It moves a lone linear critic by Adam's first step on the hand gradient."""
    config = _config(
        hidden=(), n_critics=1, target_subset=1, gamma=0.0, dtype="float64"
    )
    params = init_agent(pointmass, config, seed=8)
    batch = _batch(pointmass)
    critic = params.critics[0]
    x = np.concatenate([batch.obs, batch.actions], axis=1)
    weight, bias = (p.copy() for p in critic.params)
    residual = x @ weight[:, 0] + bias[0] - batch.rewards
    grad_w = x.T @ (2.0 * residual / len(batch))
    grad_b = np.sum(2.0 * residual / len(batch))
    critic_update(batch, params, config, np.random.default_rng(0), pointmass)

    def adam_first(param: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return param - config.critic_lr * grad / (np.abs(grad) + config.adam_eps)

    expected_weight = adam_first(weight[:, 0], grad_w)
    np.testing.assert_allclose(critic.params[0][:, 0], expected_weight, atol=1e-12)
    np.testing.assert_allclose(critic.params[1], adam_first(bias, grad_b), atol=1e-12)
    new_residual = x @ critic.params[0][:, 0] + critic.params[1][0] - batch.rewards
    assert np.mean(new_residual**2) < np.mean(residual**2)


@pytest.mark.parametrize(
    "values, expected",
    [
        ([5.0, 5.0, 5.0], [1.0, 1.0, 1.0]),
        ([2.0, 4.0], [2 / 3, 4 / 3]),
        ([0.0, 0.0], [0.0, 0.0]),
    ],
)
def test_qbar_normalize(values: List[float], expected: List[float]) -> None:
    """It divides by the mean absolute value plus epsilon."""
    normalized, _ = qbar_normalize(np.array(values))
    np.testing.assert_allclose(normalized, expected, atol=1e-6)


def test_qbar_uses_absolute_values_by_default() -> None:
    """It keeps the sign of a negative batch when normalizing by |Q|."""
    normalized, scale = qbar_normalize(np.array([-2.0, -4.0]))
    assert scale > 0.0
    np.testing.assert_allclose(normalized, [-2 / 3, -4 / 3], atol=1e-6)


def _actor_objective(
    batch: Batch, critics: Sequence[DenseNet], alpha: float, scales: Sequence[float]
) -> Callable[[DenseNet], float]:
    def loss(actor: DenseNet) -> float:
        actions, _ = net_forward(actor, batch.obs)
        inputs = np.concatenate([batch.obs, actions], axis=1)
        q_term = np.mean(
            [scale * np.mean(critic(inputs)) for critic, scale in zip(critics, scales)]
        )
        bc_term = np.mean(np.sum((actions - batch.actions) ** 2, axis=1))
        return float(-(q_term - alpha * bc_term))

    return loss


def test_actor_gradient_matches_finite_differences(pointmass: EnvSpec) -> None:
    """It differentiates the normalized-Q plus BC objective exactly."""
    config = _config(dtype="float64")
    params = init_agent(pointmass, config, seed=4)
    batch = _batch(pointmass, size=8)
    actions = params.actor(batch.obs)
    inputs = np.concatenate([batch.obs, actions], axis=1)
    scales = [qbar_normalize(critic(inputs)[:, 0])[1] for critic in params.critics]
    grads, losses = actor_gradients(batch, params, 0.4, config)
    objective = _actor_objective(batch, params.critics, 0.4, scales)
    assert losses.actor_loss == pytest.approx(objective(params.actor), rel=1e-10)
    report = finite_diff_check(params.actor, objective, grads, abs_floor=1e-5)
    assert report.passed, report


def test_zero_critics_leave_pure_behavior_cloning(pointmass: EnvSpec) -> None:
    """It follows the BC regression gradient when every critic is identically zero."""
    config = _config(dtype="float64")
    params = init_agent(pointmass, config, seed=5)
    for critic in params.critics:
        critic.set_params([np.zeros_like(p) for p in critic.params])
    batch = _batch(pointmass)
    actions, cache = net_forward(params.actor, batch.obs)
    bc_grads, _ = net_backward(
        params.actor, cache, 2.0 * 0.4 * (actions - batch.actions) / len(batch)
    )
    grads, losses = actor_gradients(batch, params, 0.4, config)
    assert losses.q_term == 0.0
    for grad, expected in zip(grads, bc_grads):
        np.testing.assert_allclose(grad, expected, atol=1e-14)


def test_actor_update_applies_adam(pointmass: EnvSpec) -> None:
    """It moves the actor and advances its optimizer by one step."""
    config = _config()
    params = init_agent(pointmass, config, seed=6)
    before = [p.copy() for p in params.actor.params]
    version = params.actor.version
    actor_update(_batch(pointmass), params, 0.0, config)
    assert params.actor_opt.t == 1 and params.actor.version == version + 1
    assert any(not np.array_equal(a, b) for a, b in zip(before, params.actor.params))


@pytest.mark.parametrize("tau, expected", [(1.0, 2.0), (0.0, 4.0), (0.5, 3.0)])
def test_polyak_update(tau: float, expected: float) -> None:
    """It blends online into target parameters with coefficient tau."""
    online = DenseNet((1, 1), [np.array([[2.0]]), np.array([2.0])])
    target = DenseNet((1, 1), [np.array([[4.0]]), np.array([4.0])])
    polyak_update(online, target, tau)
    assert target.params[0][0, 0] == expected and target.params[1][0] == expected


def test_train_step_delays_actor_and_targets(pointmass: EnvSpec) -> None:
    """It updates the actor and every target only on every d-th critic step."""
    agent = TD3BCAgent.create(pointmass, _config(policy_delay=2), seed=0)
    batch = _batch(pointmass)
    rng = np.random.default_rng(0)
    target_before = [p.copy() for p in agent.params.target_critics[0].params]
    first = agent.train_step(batch, 0.4, rng)
    assert first.actor is None
    assert all(
        np.array_equal(a, b)
        for a, b in zip(target_before, agent.params.target_critics[0].params)
    )
    second = agent.train_step(batch, 0.4, rng)
    assert second.actor is not None
    assert (agent.critic_steps, agent.actor_steps) == (2, 1)
    target_after = agent.params.target_critics[0].params[0]
    assert not np.array_equal(target_before[0], target_after)


def test_checkpoint_round_trip(pointmass: EnvSpec, tmp_path: Path) -> None:
    """It restores an agent whose checkpoint is byte-identical."""
    agent = TD3BCAgent.create(pointmass, _config(), seed=1, alpha_offline=0.3)
    agent.alpha_online = 0.125
    path = tmp_path / "agent.ckpt"
    agent.save(path)
    loaded = TD3BCAgent.load(path)
    assert loaded.to_bytes() == agent.to_bytes()
    assert (loaded.alpha_offline, loaded.alpha_online) == (0.3, 0.125)
    assert loaded.config == agent.config
    assert isinstance(loaded.params.actor_opt, AdamState)
    assert loaded.params.actor_opt.t == 0


def test_truncated_checkpoint_is_rejected(pointmass: EnvSpec) -> None:
    """It refuses a checkpoint missing its tail."""
    payload = TD3BCAgent.create(pointmass, _config(), seed=1).to_bytes()
    with pytest.raises(CheckpointFormatError):
        TD3BCAgent.from_bytes(payload[:-8])


def test_init_targets_copy_online_nets(pointmass: EnvSpec) -> None:
    """It starts every target equal to, but independent of, its online net."""
    params: AgentParams = init_agent(pointmass, _config(), seed=2)
    assert len(params.critics) == 3
    for online, target in zip(params.critics, params.target_critics):
        assert all(np.array_equal(a, b) for a, b in zip(online.params, target.params))
        assert online.params[0] is not target.params[0]
