"""Shared fixtures: tiny configurations, reference scores and datasets."""
from pathlib import Path
from typing import Dict

import numpy as np
import pytest

from adaptive_td3bc.config import RunConfig
from adaptive_td3bc.config import build_config
from adaptive_td3bc.datasets import OfflineDataset
from adaptive_td3bc.datasets import ReferenceScores
from adaptive_td3bc.envs import EnvSpec
from adaptive_td3bc.envs import make_spec
from adaptive_td3bc.forge import collect_rollouts
from adaptive_td3bc.nn import DenseNet


TINY_SETTINGS: Dict[str, str] = {
    "env_id": "pointmass",
    "seed": "3",
    "offline_steps": "20",
    "online_steps": "200",
    "updates_per_step": "1",
    "eval_interval": "100",
    "eval_episodes": "2",
    "quiet": "true",
    "agent.hidden": "8,8",
    "agent.n_critics": "3",
    "agent.target_subset": "2",
    "agent.batch_size": "16",
    "replay.keep_fraction": "0.5",
}


@pytest.fixture
def pointmass() -> EnvSpec:
    """The two-dimensional point-mass environment."""
    return make_spec("pointmass")


@pytest.fixture
def pointmass_refs() -> ReferenceScores:
    """Hand-picked pointmass reference returns."""
    return ReferenceScores(r_random=-80.0, r_expert=-20.0, r_max_t=0.0, n_episodes=10)


@pytest.fixture
def random_dataset(pointmass_refs: ReferenceScores) -> OfflineDataset:
    """Three uniform-random pointmass episodes."""
    spec = make_spec("pointmass")
    episodes = collect_rollouts(spec, None, 300, seed=11)
    return OfflineDataset.from_episodes(
        "pointmass", "random", episodes, pointmass_refs, 11
    )


@pytest.fixture
def tiny_values(tmp_path: Path) -> Dict[str, str]:
    """Flat settings of a run small enough for unit tests."""
    return {**TINY_SETTINGS, "out_dir": str(tmp_path / "run")}


@pytest.fixture
def tiny_config(tiny_values: Dict[str, str]) -> RunConfig:
    """A validated tiny run configuration."""
    return build_config(tiny_values)


def pointmass_controller(gain: float = 2.0, damping: float = 1.0) -> DenseNet:
    """A linear-tanh policy pushing the point mass towards the origin."""
    weight = np.zeros((4, 2))
    weight[0, 0] = weight[1, 1] = -gain
    weight[2, 0] = weight[3, 1] = -damping
    return DenseNet(
        (4, 2),
        [weight, np.zeros(2)],
        head="scaled_tanh",
        action_low=(-1.0, -1.0),
        action_high=(1.0, 1.0),
    )
