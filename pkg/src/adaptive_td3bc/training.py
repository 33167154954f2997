"""Offline pre-training, online fine-tuning, evaluation and learning curves."""
import logging
import math
import time
from pathlib import Path
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Union

import numpy as np
import pandas as pd
from tqdm import tqdm

from adaptive_td3bc.agent import TD3BCAgent
from adaptive_td3bc.agent import UpdateStats
from adaptive_td3bc.agent import select_action
from adaptive_td3bc.config import RunConfig
from adaptive_td3bc.controller import AlphaController
from adaptive_td3bc.controller import adapt_alpha
from adaptive_td3bc.controller import resolve_target
from adaptive_td3bc.datasets import OfflineDataset
from adaptive_td3bc.datasets import ReferenceScores
from adaptive_td3bc.datasets import normalize_return
from adaptive_td3bc.envs import EnvSpec
from adaptive_td3bc.envs import Transition
from adaptive_td3bc.envs import env_reset
from adaptive_td3bc.envs import env_step
from adaptive_td3bc.envs import episode_return
from adaptive_td3bc.envs import make_spec
from adaptive_td3bc.envs import random_action
from adaptive_td3bc.envs import run_episode
from adaptive_td3bc.exceptions import DatasetMismatchError
from adaptive_td3bc.exceptions import TrainingDivergedError
from adaptive_td3bc.helpers import RngStreams
from adaptive_td3bc.helpers import derive_seed
from adaptive_td3bc.nn import DenseNet
from adaptive_td3bc.replay import ReplayBuffer


logger = logging.getLogger(__name__)

CURVE_COLUMNS = (
    "phase",
    "step",
    "episode_return",
    "normalized_return",
    "alpha_online",
    "r_avg",
    "eval_mean",
    "eval_std",
    "eval_normalized",
    "td_loss",
    "wall_clock_s",
)
OFFLINE_PHASE = "offline"
ONLINE_PHASE = "online"
PHASE_KEYS = {OFFLINE_PHASE: 1, ONLINE_PHASE: 2, "expert": 3, "evaluate": 4}
_SEED_SPACE = 2**32


class LearningCurve:
    """Rows of a learning curve; a row per (phase, step), merged on collision."""

    def __init__(self) -> None:
        """Start empty; wall-clock is measured from construction."""
        self.rows: List[Dict[str, Any]] = []
        self._started = time.perf_counter()

    def log(self, phase: str, step: int, **values: Any) -> None:
        """Record values at ``step``; steps must not decrease within a phase."""
        values["wall_clock_s"] = time.perf_counter() - self._started
        last = next((row for row in reversed(self.rows) if row["phase"] == phase), None)
        if last is not None and last["step"] == step:
            last.update(values)
            return
        if last is not None and step < last["step"]:
            raise ValueError(f"Step {step} precedes {last['step']} in phase {phase}")
        row: Dict[str, Any] = {column: math.nan for column in CURVE_COLUMNS}
        row.update(phase=phase, step=step, **values)
        self.rows.append(row)

    def extend(self, other: "LearningCurve") -> None:
        """Append the rows of another curve."""
        self.rows.extend(dict(row) for row in other.rows)

    def eval_rows(self, phase: Optional[str] = None) -> List[Dict[str, Any]]:
        """Rows that carry an evaluation."""
        return [
            row
            for row in self.rows
            if not math.isnan(row["eval_mean"])
            and (phase is None or row["phase"] == phase)
        ]

    def to_frame(self, wall_clock: bool = False) -> pd.DataFrame:
        """Curve as a DataFrame with the fixed column order."""
        columns = [c for c in CURVE_COLUMNS if wall_clock or c != "wall_clock_s"]
        return pd.DataFrame(self.rows, columns=list(CURVE_COLUMNS))[columns]

    def write_csv(self, path: Union[str, Path], wall_clock: bool = False) -> None:
        """Write the curve; without wall-clock the file is byte-reproducible."""
        self.to_frame(wall_clock).to_csv(
            path, index=False, float_format="%.10g", na_rep="", lineterminator="\n"
        )


class EvaluationResult(NamedTuple):
    """Returns of a deterministic evaluation."""

    mean: float
    std: float
    returns: List[float]


class TrainingResult(NamedTuple):
    """An agent and the curve of the phase that produced it."""

    agent: TD3BCAgent
    curve: LearningCurve


def evaluate_policy(
    actor: DenseNet, spec: EnvSpec, n_episodes: int, seed: int
) -> EvaluationResult:
    """Noise-free rollouts on fresh environments with independent sub-seeds."""
    low, high = spec.low, spec.high

    def policy(obs: np.ndarray) -> np.ndarray:
        return select_action(actor, obs, 0.0, None, low, high)

    returns = [
        run_episode(spec, policy, derive_seed(seed, episode))[1]
        for episode in range(n_episodes)
    ]
    values = np.asarray(returns, dtype=np.float64)
    return EvaluationResult(float(values.mean()), float(values.std()), returns)


def _check_finite(stats: UpdateStats, phase: str, step: int) -> None:
    values = [stats.td_loss]
    if stats.actor is not None:
        values += [stats.actor.actor_loss, stats.actor.q_term, stats.actor.bc_term]
    if not all(math.isfinite(value) for value in values):
        raise TrainingDivergedError(
            f"Non-finite loss in {phase} phase at step {step}: "
            f"td_loss={stats.td_loss}, "
            f"actor={stats.actor}"
        )


def _check_dataset(config: RunConfig, dataset: OfflineDataset) -> EnvSpec:
    if dataset.env_id != config.env_id:
        raise DatasetMismatchError(
            f"Dataset was recorded on {dataset.env_id!r} "
            f"but env_id is {config.env_id!r}"
        )
    return make_spec(config.env_id)


def _log_eval(
    curve: LearningCurve,
    phase: str,
    step: int,
    result: EvaluationResult,
    refs: Optional[ReferenceScores],
    **values: Any,
) -> None:
    normalized = normalize_return(result.mean, refs) if refs is not None else math.nan
    curve.log(
        phase,
        step,
        eval_mean=result.mean,
        eval_std=result.std,
        eval_normalized=normalized,
        **values,
    )
    logger.info(
        "[%s] step %d: eval %.2f +- %.2f (normalized %.3f)",
        phase,
        step,
        result.mean,
        result.std,
        normalized,
    )


def _next_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(_SEED_SPACE))


def pretrain_offline(
    config: RunConfig,
    dataset: OfflineDataset,
    agent: Optional[TD3BCAgent] = None,
) -> TrainingResult:
    """K critic updates with delayed actor updates at fixed alpha_offline."""
    spec = _check_dataset(config, dataset)
    streams = RngStreams(derive_seed(config.seed, PHASE_KEYS[OFFLINE_PHASE]))
    alpha = config.controller.scaled_alpha_offline
    learner = agent or TD3BCAgent.create(
        spec, config.agent, _next_seed(streams["init"]), alpha_offline=alpha
    )
    buffer = ReplayBuffer(
        spec.obs_dim, spec.act_dim, config.replay.capacity, streams["replay"]
    )
    buffer.add_dataset(dataset)
    curve = LearningCurve()

    def evaluate(step: int, td_loss: float) -> None:
        result = evaluate_policy(
            learner.params.actor,
            spec,
            config.eval_episodes,
            _next_seed(streams["eval"]),
        )
        _log_eval(
            curve,
            OFFLINE_PHASE,
            step,
            result,
            dataset.refs,
            alpha_online=alpha,
            td_loss=td_loss,
        )

    evaluate(0, math.nan)
    losses: List[float] = []
    for step in tqdm(
        range(1, config.offline_steps + 1), desc="offline", disable=config.quiet
    ):
        batch = buffer.sample_minibatch(config.agent.batch_size, streams["minibatch"])
        stats = learner.train_step(
            batch, alpha, streams["smoothing"], streams["ensemble"]
        )
        _check_finite(stats, OFFLINE_PHASE, step)
        losses.append(stats.td_loss)
        if step % config.eval_interval == 0:
            evaluate(step, float(np.mean(losses)))
            losses = []
    return TrainingResult(learner, curve)


def run_online_phase(
    agent: TD3BCAgent,
    buffer: ReplayBuffer,
    streams: RngStreams,
    steps: int,
    updates_per_step: int,
    eval_interval: int,
    eval_episodes: int,
    controller: Optional[AlphaController] = None,
    refs: Optional[ReferenceScores] = None,
    warmup_steps: int = 0,
    phase: str = ONLINE_PHASE,
    on_eval: Optional[Callable[[int, EvaluationResult], None]] = None,
    quiet: bool = False,
) -> LearningCurve:
    """Act, store, update G times per step, adapt alpha per episode, evaluate.

    Without a controller alpha stays 0 (plain TD3). During the first
    ``warmup_steps`` actions are uniform random and no updates happen.
    """
    spec = agent.spec
    curve = LearningCurve()
    alpha = controller.alpha_online if controller is not None else 0.0

    def evaluate(step: int, td_loss: float) -> None:
        result = evaluate_policy(
            agent.params.actor, spec, eval_episodes, _next_seed(streams["eval"])
        )
        _log_eval(curve, phase, step, result, refs, alpha_online=alpha, td_loss=td_loss)
        if on_eval is not None:
            on_eval(step, result)

    evaluate(0, math.nan)
    state, obs = env_reset(spec, _next_seed(streams["env"]))
    episode_id = 0
    rewards: List[float] = []
    losses: List[float] = []
    for step in tqdm(range(1, steps + 1), desc=phase, disable=quiet):
        if step <= warmup_steps:
            action = random_action(spec, streams["exploration"])
        else:
            action = agent.act(obs, streams["exploration"])
        result = env_step(state, action)
        buffer.push(
            Transition(obs, action, result.reward, result.obs, result.terminal),
            origin="online",
            episode_id=episode_id,
        )
        rewards.append(result.reward)
        obs = result.obs
        if step > warmup_steps:
            for _ in range(updates_per_step):
                batch = buffer.sample_minibatch(
                    agent.config.batch_size, streams["minibatch"]
                )
                stats = agent.train_step(
                    batch, alpha, streams["smoothing"], streams["ensemble"]
                )
                _check_finite(stats, phase, step)
                losses.append(stats.td_loss)
        if result.terminal or result.truncated:
            total = episode_return(rewards)
            values: Dict[str, Any] = {"episode_return": total, "alpha_online": alpha}
            if refs is not None:
                values["normalized_return"] = normalize_return(total, refs)
            if controller is not None and refs is not None:
                alpha = adapt_alpha(controller, values["normalized_return"])
                agent.alpha_online = alpha
                values.update(alpha_online=alpha, r_avg=controller.r_avg)
            if losses:
                values["td_loss"] = float(np.mean(losses))
            curve.log(phase, step, **values)
            episode_id += 1
            rewards = []
            state, obs = env_reset(spec, _next_seed(streams["env"]))
        if step % eval_interval == 0:
            evaluate(step, float(np.mean(losses)) if losses else math.nan)
            losses = []
    return curve


def finetune_online(
    config: RunConfig, agent: TD3BCAgent, dataset: OfflineDataset
) -> TrainingResult:
    """Seed replay with the dataset, downsample it, then fine-tune online."""
    _check_dataset(config, dataset)
    spec = agent.spec
    streams = RngStreams(derive_seed(config.seed, PHASE_KEYS[ONLINE_PHASE]))
    buffer = ReplayBuffer(
        spec.obs_dim, spec.act_dim, config.replay.capacity, streams["replay"]
    )
    buffer.add_dataset(dataset)
    buffer.downsample(config.replay.keep_fraction, config.replay.downsample_mode)
    target = resolve_target(
        config.controller.target_mode, dataset.refs, config.controller.r_target
    )
    controller = AlphaController.from_config(config.controller, target)
    agent.alpha_offline = controller.alpha_offline
    agent.alpha_online = controller.alpha_online
    logger.info(
        "Fine-tuning from alpha_online=%.3f towards R_target=%.3f",
        controller.alpha_online,
        target,
    )
    curve = run_online_phase(
        agent,
        buffer,
        streams,
        steps=config.online_steps,
        updates_per_step=config.updates_per_step,
        eval_interval=config.eval_interval,
        eval_episodes=config.eval_episodes,
        controller=controller,
        refs=dataset.refs,
        quiet=config.quiet,
    )
    return TrainingResult(agent, curve)


def write_outputs(
    out_dir: Union[str, Path],
    result: TrainingResult,
    config: RunConfig,
    checkpoint_name: str,
    curve_name: str,
) -> None:
    """Write the checkpoint and curve CSV of a finished phase."""
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    result.agent.save(directory / checkpoint_name)
    result.curve.write_csv(directory / curve_name, wall_clock=config.record_wall_clock)
