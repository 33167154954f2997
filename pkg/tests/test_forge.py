"""Test cases for dataset tier generation."""
from typing import Dict

import numpy as np
import pytest

from adaptive_td3bc import forge
from adaptive_td3bc.config import AgentConfig
from adaptive_td3bc.config import ForgeConfig
from adaptive_td3bc.datasets import ReferenceScores
from adaptive_td3bc.envs import EnvSpec
from adaptive_td3bc.exceptions import ConfigError
from adaptive_td3bc.exceptions import InvalidReferenceScoresError
from adaptive_td3bc.exceptions import MediumBandNotReachedError
from adaptive_td3bc.forge import ReferenceAgents
from adaptive_td3bc.forge import build_dataset
from adaptive_td3bc.forge import collect_rollouts
from adaptive_td3bc.forge import reference_scores
from adaptive_td3bc.forge import train_reference_agents
from adaptive_td3bc.nn import DenseNet
from tests.conftest import pointmass_controller


@pytest.fixture
def references(pointmass: EnvSpec, pointmass_refs: ReferenceScores) -> ReferenceAgents:
    """Hand-made pointmass behavior policies: a controller and a do-nothing policy."""
    idle = DenseNet.zeros(
        (4, 2), head="scaled_tanh", action_low=(-1.0, -1.0), action_high=(1.0, 1.0)
    )
    return ReferenceAgents(
        pointmass,
        expert=pointmass_controller(),
        refs=pointmass_refs,
        medium=idle,
        medium_replay=collect_rollouts(pointmass, None, 150, seed=1),
    )


def test_collect_rollouts_cuts_the_last_episode(pointmass: EnvSpec) -> None:
    """It stops after exactly the requested number of transitions."""
    episodes = collect_rollouts(pointmass, None, 250, seed=0)
    assert [len(episode) for episode in episodes] == [100, 100, 50]


def test_collect_rollouts_is_seeded(pointmass: EnvSpec) -> None:
    """It repeats itself for the same seed and noise."""
    actor = pointmass_controller()
    first = collect_rollouts(pointmass, actor, 120, seed=3, noise=0.1)
    second = collect_rollouts(pointmass, actor, 120, seed=3, noise=0.1)
    flat = [t.action for episode in first for t in episode]
    again = [t.action for episode in second for t in episode]
    assert all(np.array_equal(a, b) for a, b in zip(flat, again))


def test_random_tier(references: ReferenceAgents) -> None:
    """It fills the random tier with uniform actions, 100 steps per episode."""
    dataset = build_dataset(references, "random", 2000, seed=0)
    assert dataset.n_episodes == 20 and dataset.tier == "random"
    assert np.all(np.abs(dataset.actions) <= 1.0)
    assert dataset.actions.std() > 0.5


def test_medium_expert_tier_splits_evenly(references: ReferenceAgents) -> None:
    """It takes the first half from the medium and the rest from the expert policy."""
    dataset = build_dataset(references, "medium_expert", 400, seed=0, rollout_noise=0.0)
    assert dataset.n_transitions == 400
    assert not np.any(dataset.actions[:200])
    assert np.all(np.any(dataset.actions[200:] != 0.0, axis=1))


def test_expert_tier_beats_random_tier(references: ReferenceAgents) -> None:
    """It yields higher episodic returns from the controller than from noise."""
    expert = build_dataset(references, "expert", 1000, seed=2)
    random = build_dataset(references, "random", 1000, seed=2)
    assert expert.episode_returns().mean() > random.episode_returns().mean()


def test_medium_replay_tier_uses_recorded_episodes(references: ReferenceAgents) -> None:
    """It stores the medium-replay episodes as recorded, ignoring the size."""
    dataset = build_dataset(references, "medium_replay", 10, seed=0)
    assert dataset.n_transitions == 150
    assert list(dataset.episode_starts) == [0, 100]


def test_medium_tiers_need_a_medium_policy(references: ReferenceAgents) -> None:
    """It refuses medium tiers when no snapshot reached the band."""
    references.medium = None
    with pytest.raises(MediumBandNotReachedError):
        build_dataset(references, "medium", 200, seed=0)
    assert build_dataset(references, "expert", 200, seed=0).n_transitions == 200


def test_size_must_cover_an_episode(references: ReferenceAgents) -> None:
    """It rejects tiers shorter than one episode."""
    with pytest.raises(ConfigError):
        build_dataset(references, "expert", 50, seed=0)


def test_reference_scores(pointmass: EnvSpec) -> None:
    """It scores the controller above the uniform-random policy."""
    refs = reference_scores(pointmass, pointmass_controller(), n_episodes=5, seed=0)
    assert refs.r_expert > refs.r_random
    assert refs.r_max_t == 0.0 and refs.n_episodes == 5


def test_reference_scores_reject_a_bad_expert(pointmass: EnvSpec) -> None:
    """It refuses an expert that does worse than random."""
    runaway = pointmass_controller(gain=-2.0, damping=-1.0)
    with pytest.raises(InvalidReferenceScoresError):
        reference_scores(pointmass, runaway, n_episodes=5, seed=0)


def _tiny_forge(**overrides: float) -> ForgeConfig:
    settings: Dict[str, float] = {
        "train_steps": 300,
        "start_steps": 100,
        "eval_interval": 100,
        "eval_episodes": 1,
        "reference_episodes": 2,
    }
    settings.update(overrides)
    return ForgeConfig(**settings)


def _tiny_agent() -> AgentConfig:
    return AgentConfig(hidden=(8, 8), n_critics=2, target_subset=2, batch_size=16)


def test_reference_training_snapshots(
    pointmass: EnvSpec, pointmass_refs: ReferenceScores, monkeypatch: pytest.MonkeyPatch
) -> None:
    """It takes the first in-band snapshot with data as medium and its buffer prefix."""
    monkeypatch.setattr(forge, "reference_scores", lambda *args: pointmass_refs)
    config = _tiny_forge(medium_low=-1e9, medium_high=1e9)
    references = train_reference_agents(
        pointmass, _tiny_agent(), config, seed=0, quiet=True
    )
    assert references.medium is not None and references.medium_replay is not None
    assert [len(episode) for episode in references.medium_replay] == [100]
    assert references.curve is not None
    assert len(references.curve.eval_rows("expert")) == 4


def test_reference_training_without_band(
    pointmass: EnvSpec, pointmass_refs: ReferenceScores, monkeypatch: pytest.MonkeyPatch
) -> None:
    """It raises for medium tiers and otherwise returns only the expert."""
    monkeypatch.setattr(forge, "reference_scores", lambda *args: pointmass_refs)
    config = _tiny_forge(medium_low=1e8, medium_high=1e9)
    with pytest.raises(MediumBandNotReachedError):
        train_reference_agents(pointmass, _tiny_agent(), config, seed=0, quiet=True)
    references = train_reference_agents(
        pointmass, _tiny_agent(), config, seed=0, quiet=True, require_medium=False
    )
    assert references.medium is None and references.medium_replay is None
