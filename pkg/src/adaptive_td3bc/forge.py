"""Manufacture offline datasets of the five quality tiers."""
import logging
from dataclasses import dataclass
from typing import List
from typing import Optional

import numpy as np

from adaptive_td3bc.agent import TD3BCAgent
from adaptive_td3bc.agent import select_action
from adaptive_td3bc.config import AgentConfig
from adaptive_td3bc.config import ForgeConfig
from adaptive_td3bc.datasets import OfflineDataset
from adaptive_td3bc.datasets import ReferenceScores
from adaptive_td3bc.datasets import normalize_return
from adaptive_td3bc.envs import EnvSpec
from adaptive_td3bc.envs import Transition
from adaptive_td3bc.envs import random_action
from adaptive_td3bc.envs import run_episode
from adaptive_td3bc.exceptions import ConfigError
from adaptive_td3bc.exceptions import InvalidReferenceScoresError
from adaptive_td3bc.exceptions import MediumBandNotReachedError
from adaptive_td3bc.helpers import RngStreams
from adaptive_td3bc.helpers import derive_seed
from adaptive_td3bc.nn import DenseNet
from adaptive_td3bc.replay import ReplayBuffer
from adaptive_td3bc.training import PHASE_KEYS
from adaptive_td3bc.training import EvaluationResult
from adaptive_td3bc.training import LearningCurve
from adaptive_td3bc.training import evaluate_policy
from adaptive_td3bc.training import run_online_phase


logger = logging.getLogger(__name__)

Episodes = List[List[Transition]]


@dataclass
class Snapshot:
    """An actor copy taken at an evaluation during expert training."""

    step: int
    actor: DenseNet
    eval_mean: float
    replay_size: int


@dataclass
class ReferenceAgents:
    """Behavior policies and scores shared by every tier of one environment."""

    spec: EnvSpec
    expert: DenseNet
    refs: ReferenceScores
    medium: Optional[DenseNet] = None
    medium_replay: Optional[Episodes] = None
    curve: Optional[LearningCurve] = None


def collect_rollouts(
    spec: EnvSpec,
    actor: Optional[DenseNet],
    n_transitions: int,
    seed: int,
    noise: float = 0.0,
) -> Episodes:
    """Roll out until exactly ``n_transitions`` steps; ``actor=None`` acts uniformly."""
    rng = np.random.default_rng(derive_seed(seed, 0))
    sigma = noise * spec.half_range

    def policy(obs: np.ndarray) -> np.ndarray:
        if actor is None:
            return random_action(spec, rng)
        return select_action(actor, obs, sigma, rng, spec.low, spec.high)

    episodes: Episodes = []
    remaining = n_transitions
    while remaining > 0:
        transitions, _ = run_episode(
            spec, policy, derive_seed(seed, 1, len(episodes)), max_steps=remaining
        )
        episodes.append(transitions)
        remaining -= len(transitions)
    return episodes


def reference_scores(
    spec: EnvSpec, expert: DenseNet, n_episodes: int, seed: int
) -> ReferenceScores:
    """Mean returns of the uniform-random and the expert policy."""
    rng = np.random.default_rng(derive_seed(seed, 2))

    def random_policy(obs: np.ndarray) -> np.ndarray:
        return random_action(spec, rng)

    random_returns = [
        run_episode(spec, random_policy, derive_seed(seed, 3, episode))[1]
        for episode in range(n_episodes)
    ]
    expert_eval = evaluate_policy(expert, spec, n_episodes, derive_seed(seed, 4))
    r_random = float(np.mean(random_returns))
    if expert_eval.mean <= r_random:
        raise InvalidReferenceScoresError(
            f"Expert return {expert_eval.mean:.2f} does not beat random {r_random:.2f}"
        )
    return ReferenceScores(
        r_random=r_random,
        r_expert=expert_eval.mean,
        r_max_t=spec.r_max * spec.max_steps,
        n_episodes=n_episodes,
    )


def _replay_episodes(buffer: ReplayBuffer, count: int) -> Episodes:
    order = buffer.chronological()[:count]
    episodes: Episodes = []
    current_id: Optional[int] = None
    for slot in order:
        if buffer.episode_ids[slot] != current_id:
            episodes.append([])
            current_id = int(buffer.episode_ids[slot])
        episodes[-1].append(
            Transition(
                buffer.obs[slot].astype(np.float64),
                buffer.actions[slot].astype(np.float64),
                float(buffer.rewards[slot]),
                buffer.next_obs[slot].astype(np.float64),
                bool(buffer.terminals[slot]),
            )
        )
    return episodes


def train_reference_agents(
    spec: EnvSpec,
    agent_config: AgentConfig,
    forge_config: ForgeConfig,
    seed: int,
    quiet: bool = False,
    require_medium: bool = True,
) -> ReferenceAgents:
    """Train TD3 online without BC; keep the best snapshot as expert.

    The medium policy is the first snapshot whose evaluation normalizes into
    ``[medium_low, medium_high]``, and the medium-replay data is everything the
    replay buffer held at that moment.
    """
    streams = RngStreams(derive_seed(seed, PHASE_KEYS["expert"]))
    agent = TD3BCAgent.create(
        spec, agent_config, int(streams["init"].integers(2**32)), alpha_offline=0.0
    )
    buffer = ReplayBuffer(
        spec.obs_dim,
        spec.act_dim,
        forge_config.train_steps + 1,
        streams["replay"],
    )
    snapshots: List[Snapshot] = []

    def on_eval(step: int, result: EvaluationResult) -> None:
        snapshots.append(
            Snapshot(step, agent.params.actor.copy(), result.mean, len(buffer))
        )

    logger.info(
        "Training %s reference agent for %d steps",
        spec.env_id,
        forge_config.train_steps,
    )
    curve = run_online_phase(
        agent,
        buffer,
        streams,
        steps=forge_config.train_steps,
        updates_per_step=forge_config.updates_per_step,
        eval_interval=forge_config.eval_interval,
        eval_episodes=forge_config.eval_episodes,
        warmup_steps=forge_config.start_steps,
        phase="expert",
        on_eval=on_eval,
        quiet=quiet,
    )
    best = max(snapshots, key=lambda snapshot: snapshot.eval_mean)
    refs = reference_scores(
        spec, best.actor, forge_config.reference_episodes, derive_seed(seed, 5)
    )
    medium = next(
        (
            snapshot
            for snapshot in snapshots
            if snapshot.replay_size > 0
            and forge_config.medium_low
            <= normalize_return(snapshot.eval_mean, refs)
            <= forge_config.medium_high
        ),
        None,
    )
    if medium is None:
        if require_medium:
            raise MediumBandNotReachedError(
                f"No snapshot of the {spec.env_id} agent evaluated inside "
                f"[{forge_config.medium_low}, {forge_config.medium_high}] within "
                f"{forge_config.train_steps} steps"
            )
        logger.warning("No medium-band snapshot; medium tiers are unavailable")
        return ReferenceAgents(spec, best.actor, refs, curve=curve)
    logger.info(
        "Expert from step %d (return %.2f); medium from step %d (normalized %.3f)",
        best.step,
        best.eval_mean,
        medium.step,
        normalize_return(medium.eval_mean, refs),
    )
    return ReferenceAgents(
        spec,
        best.actor,
        refs,
        medium=medium.actor,
        medium_replay=_replay_episodes(buffer, medium.replay_size),
        curve=curve,
    )


def build_dataset(
    references: ReferenceAgents,
    tier: str,
    size: int,
    seed: int,
    rollout_noise: float = 0.05,
) -> OfflineDataset:
    """Assemble one tier from already trained reference policies."""
    spec = references.spec
    if size < spec.max_steps and tier != "medium_replay":
        raise ConfigError(
            f"forge.size must cover at least one episode ({spec.max_steps} steps)",
            key="forge.size",
        )
    if tier.startswith("medium") and references.medium is None:
        raise MediumBandNotReachedError(f"Tier {tier!r} needs a medium snapshot")
    if tier == "random":
        episodes = collect_rollouts(spec, None, size, derive_seed(seed, 10))
    elif tier == "expert":
        episodes = collect_rollouts(
            spec, references.expert, size, derive_seed(seed, 11), rollout_noise
        )
    elif tier == "medium":
        episodes = collect_rollouts(
            spec, references.medium, size, derive_seed(seed, 12), rollout_noise
        )
    elif tier == "medium_replay":
        assert references.medium_replay is not None
        episodes = references.medium_replay
    elif tier == "medium_expert":
        half = size // 2
        episodes = collect_rollouts(
            spec, references.medium, half, derive_seed(seed, 12), rollout_noise
        ) + collect_rollouts(
            spec, references.expert, size - half, derive_seed(seed, 11), rollout_noise
        )
    else:
        raise ValueError(f"Unknown tier {tier!r}")
    return OfflineDataset.from_episodes(
        spec.env_id, tier, episodes, references.refs, seed
    )


def generate_dataset(
    spec: EnvSpec,
    tier: str,
    size: int,
    seed: int,
    agent_config: Optional[AgentConfig] = None,
    forge_config: Optional[ForgeConfig] = None,
    quiet: bool = False,
) -> OfflineDataset:
    """Train the reference agents and build a single tier."""
    forge_config = forge_config or ForgeConfig()
    references = train_reference_agents(
        spec,
        agent_config or AgentConfig(),
        forge_config,
        seed,
        quiet=quiet,
        require_medium=tier in ("medium", "medium_replay", "medium_expert"),
    )
    return build_dataset(references, tier, size, seed, forge_config.rollout_noise)
