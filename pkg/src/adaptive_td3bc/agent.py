"""TD3 agent with a randomized critic ensemble and normalized-Q behavior cloning."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np

from adaptive_td3bc.config import AgentConfig
from adaptive_td3bc.envs import EnvSpec
from adaptive_td3bc.envs import make_spec
from adaptive_td3bc.exceptions import CheckpointFormatError
from adaptive_td3bc.exceptions import ShapeError
from adaptive_td3bc.helpers import decode_header
from adaptive_td3bc.helpers import derive_seed
from adaptive_td3bc.helpers import encode_header
from adaptive_td3bc.helpers import require_field
from adaptive_td3bc.nn import AdamState
from adaptive_td3bc.nn import DenseNet
from adaptive_td3bc.nn import adam_step
from adaptive_td3bc.nn import net_backward
from adaptive_td3bc.nn import net_forward


logger = logging.getLogger(__name__)

AGENT_MAGIC = "ADAPTIVE-TD3BC-AGENT"
AGENT_FORMAT_VERSION = "1"


@dataclass
class Batch:
    """A minibatch of transitions stored column-wise."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    terminals: np.ndarray

    def __len__(self) -> int:
        """Number of transitions."""
        return int(self.rewards.shape[0])


@dataclass
class AgentParams:
    """Actor, critic ensemble, their targets and optimizer states."""

    actor: DenseNet
    critics: List[DenseNet]
    target_actor: DenseNet
    target_critics: List[DenseNet]
    actor_opt: AdamState
    critic_opts: List[AdamState]


class CriticTarget(NamedTuple):
    """Shared regression targets of one critic update."""

    values: np.ndarray
    subset: np.ndarray
    next_actions: np.ndarray


class ActorLosses(NamedTuple):
    """Components of the behavior-cloning regularized policy objective."""

    actor_loss: float
    q_term: float
    bc_term: float


def _adam(config: AgentConfig, params: Sequence[np.ndarray], lr: float) -> AdamState:
    return AdamState.for_params(
        params,
        lr=lr,
        beta1=config.adam_beta1,
        beta2=config.adam_beta2,
        eps=config.adam_eps,
    )


def init_agent(spec: EnvSpec, config: AgentConfig, seed: int) -> AgentParams:
    """Build a fresh actor and ensemble; targets start as exact copies."""
    actor = DenseNet.initialize(
        (spec.obs_dim, *config.hidden, spec.act_dim),
        seed=derive_seed(seed, 0),
        head="scaled_tanh",
        action_low=spec.action_low,
        action_high=spec.action_high,
        dtype=config.dtype,
    )
    critics = [
        DenseNet.initialize(
            (spec.obs_dim + spec.act_dim, *config.hidden, 1),
            seed=derive_seed(seed, index + 1),
            dtype=config.dtype,
        )
        for index in range(config.n_critics)
    ]
    return AgentParams(
        actor=actor,
        critics=critics,
        target_actor=actor.copy(),
        target_critics=[critic.copy() for critic in critics],
        actor_opt=_adam(config, actor.params, config.actor_lr),
        critic_opts=[
            _adam(config, critic.params, config.critic_lr) for critic in critics
        ],
    )


def select_action(
    actor: DenseNet,
    obs: np.ndarray,
    sigma: Union[float, np.ndarray],
    rng: Optional[np.random.Generator],
    low: np.ndarray,
    high: np.ndarray,
) -> np.ndarray:
    """``clip(actor(s) + N(0, sigma^2), low, high)``; sigma = 0 draws no noise."""
    action = np.asarray(actor(obs), dtype=np.float64)
    scale = np.broadcast_to(np.asarray(sigma, dtype=np.float64), action.shape[-1:])
    if np.any(scale > 0.0):
        if rng is None:
            raise ValueError("A random generator is required when sigma > 0")
        action = action + rng.standard_normal(action.shape) * scale
    return np.clip(action, low, high)


def _critic_inputs(obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.concatenate([obs, actions], axis=-1)


def _draw_subset(
    config: AgentConfig, rng: np.random.Generator, batch_size: int
) -> np.ndarray:
    n_critics = config.n_critics
    if config.ensemble_mode == "full_min":
        return np.arange(n_critics)
    if config.ensemble_mode == "twin":
        return np.arange(min(2, n_critics))
    if config.per_sample_subset:
        order = np.argsort(rng.random((batch_size, n_critics)), axis=1)
        return np.sort(order[:, : config.target_subset], axis=1)
    return np.sort(rng.choice(n_critics, size=config.target_subset, replace=False))


def compute_critic_target(
    batch: Batch,
    target_actor: DenseNet,
    target_critics: Sequence[DenseNet],
    config: AgentConfig,
    rng: np.random.Generator,
    spec: EnvSpec,
    subset_rng: Optional[np.random.Generator] = None,
    subset: Optional[Sequence[int]] = None,
) -> CriticTarget:
    """``r + gamma (1 - terminal) min_{i in subset} Q'_i(s', a')`` with smoothed ``a'``.

    The smoothing noise is drawn before the subset so that modes differing only
    in the subset see identical next actions.
    """
    if len(batch) == 0:
        raise ShapeError("Cannot compute targets for an empty batch")
    half = spec.half_range
    noise = rng.standard_normal((len(batch), spec.act_dim))
    noise *= config.policy_noise * half
    noise = np.clip(noise, -config.noise_clip * half, config.noise_clip * half)
    next_actions = np.clip(target_actor(batch.next_obs) + noise, spec.low, spec.high)
    if subset is not None:
        chosen = np.asarray(subset, dtype=np.int64)
    else:
        chosen = _draw_subset(config, subset_rng or rng, len(batch))
    needed = np.unique(chosen)
    inputs = _critic_inputs(batch.next_obs, next_actions)
    q_values = np.zeros((len(target_critics), len(batch)), dtype=np.float64)
    for index in needed:
        q_values[index] = target_critics[index](inputs)[:, 0]
    if chosen.ndim == 2:
        q_min = np.take_along_axis(q_values.T, chosen, axis=1).min(axis=1)
    else:
        q_min = q_values[chosen].min(axis=0)
    not_done = 1.0 - np.asarray(batch.terminals, dtype=np.float64)
    rewards = np.asarray(batch.rewards, dtype=np.float64)
    if config.gamma == 0.0:
        values = rewards.copy()
    else:
        values = rewards + config.gamma * not_done * q_min
    return CriticTarget(values=values, subset=chosen, next_actions=next_actions)


def critic_update(
    batch: Batch,
    params: AgentParams,
    config: AgentConfig,
    rng: np.random.Generator,
    spec: EnvSpec,
    subset_rng: Optional[np.random.Generator] = None,
) -> float:
    """One Adam step for every critic towards the same targets; returns mean TD loss."""
    target = compute_critic_target(
        batch, params.target_actor, params.target_critics, config, rng, spec, subset_rng
    )
    inputs = _critic_inputs(batch.obs, batch.actions)
    losses = []
    for critic, opt in zip(params.critics, params.critic_opts):
        q_values, cache = net_forward(critic, inputs)
        residual = q_values[:, 0] - target.values
        losses.append(float(np.mean(residual**2)))
        output_grad = (2.0 / len(batch)) * residual[:, None]
        grads, _ = net_backward(critic, cache, output_grad)
        adam_step(critic.params, grads, opt)
        critic.mark_updated()
    return float(np.mean(losses))


def qbar_normalize(
    q_values: np.ndarray, epsilon: float = 1e-6, use_abs: bool = True
) -> Tuple[np.ndarray, float]:
    """Divide by the batch mean (absolute) Q; the scale is a constant for gradients."""
    values = np.asarray(q_values, dtype=np.float64)
    if values.size == 0:
        raise ShapeError("Cannot normalize an empty batch")
    magnitude = np.mean(np.abs(values)) if use_abs else np.mean(values)
    scale = 1.0 / (float(magnitude) + epsilon)
    return values * scale, scale


def actor_gradients(
    batch: Batch, params: AgentParams, alpha: float, config: AgentConfig
) -> Tuple[List[np.ndarray], ActorLosses]:
    """Actor gradients of ``-(mean_i Qbar_i(s, pi(s)) - alpha |pi(s) - a|^2)``.

    Each critic's normalizer ``1 / (mean |Q_i| + eps)`` is held constant.
    """
    size = len(batch)
    n_critics = len(params.critics)
    actions, actor_cache = net_forward(params.actor, batch.obs)
    inputs = _critic_inputs(np.asarray(batch.obs, dtype=actions.dtype), actions)
    obs_dim = params.actor.input_dim
    action_grad = np.zeros(actions.shape, dtype=np.float64)
    q_term = 0.0
    for critic in params.critics:
        q_values, cache = net_forward(critic, inputs)
        normalized, scale = qbar_normalize(
            q_values[:, 0], config.q_norm_epsilon, config.q_norm_abs
        )
        q_term += float(np.mean(normalized)) / n_critics
        # minimizing the negated objective
        output_grad = np.full((size, 1), -scale / (n_critics * size))
        _, input_grad = net_backward(critic, cache, output_grad)
        action_grad += input_grad[:, obs_dim:]
    difference = actions - np.asarray(batch.actions, dtype=np.float64)
    bc_term = float(np.mean(np.sum(difference**2, axis=1)))
    action_grad += 2.0 * alpha * difference / size
    grads, _ = net_backward(params.actor, actor_cache, action_grad)
    losses = ActorLosses(
        actor_loss=-(q_term - alpha * bc_term), q_term=q_term, bc_term=bc_term
    )
    return grads, losses


def actor_update(
    batch: Batch, params: AgentParams, alpha: float, config: AgentConfig
) -> ActorLosses:
    """Ascend ``mean_i Qbar_i(s, pi(s)) - alpha |pi(s) - a|^2`` for one Adam step."""
    grads, losses = actor_gradients(batch, params, alpha, config)
    adam_step(params.actor.params, grads, params.actor_opt)
    params.actor.mark_updated()
    return losses


def polyak_update(online: DenseNet, target: DenseNet, tau: float) -> DenseNet:
    """Blend ``target <- tau online + (1 - tau) target`` in place."""
    if online.layer_sizes != target.layer_sizes:
        raise ShapeError(
            f"Layer sizes differ: {online.layer_sizes} vs {target.layer_sizes}"
        )
    for source, destination in zip(online.params, target.params):
        destination[...] = tau * source + (1.0 - tau) * destination
    target.mark_updated()
    return target


class UpdateStats(NamedTuple):
    """What one call to :meth:`TD3BCAgent.train_step` did."""

    td_loss: float
    actor: Optional[ActorLosses]


class TD3BCAgent:
    """Owns the parameters and counters; applies delayed actor and target updates."""

    def __init__(
        self,
        spec: EnvSpec,
        config: AgentConfig,
        params: AgentParams,
        alpha_offline: float = 0.4,
        alpha_online: Optional[float] = None,
    ) -> None:
        """Wrap existing parameters."""
        self.spec = spec
        self.config = config
        self.params = params
        self.alpha_offline = alpha_offline
        self.alpha_online = alpha_offline if alpha_online is None else alpha_online
        self.critic_steps = 0
        self.actor_steps = 0

    @classmethod
    def create(
        cls, spec: EnvSpec, config: AgentConfig, seed: int, alpha_offline: float = 0.4
    ) -> "TD3BCAgent":
        """Freshly initialized agent."""
        return cls(spec, config, init_agent(spec, config, seed), alpha_offline)

    def act(
        self, obs: np.ndarray, rng: Optional[np.random.Generator], explore: bool = True
    ) -> np.ndarray:
        """Action for ``obs``, with exploration noise when ``explore``."""
        sigma = self.config.expl_noise * self.spec.half_range if explore else 0.0
        return select_action(
            self.params.actor, obs, sigma, rng, self.spec.low, self.spec.high
        )

    def train_step(
        self,
        batch: Batch,
        alpha: float,
        rng: np.random.Generator,
        subset_rng: Optional[np.random.Generator] = None,
    ) -> UpdateStats:
        """One critic update; every d-th also updates the actor and all targets."""
        td_loss = critic_update(
            batch, self.params, self.config, rng, self.spec, subset_rng
        )
        self.critic_steps += 1
        actor_losses = None
        if self.critic_steps % self.config.policy_delay == 0:
            actor_losses = actor_update(batch, self.params, alpha, self.config)
            self.actor_steps += 1
            polyak_update(self.params.actor, self.params.target_actor, self.config.tau)
            for critic, target in zip(self.params.critics, self.params.target_critics):
                polyak_update(critic, target, self.config.tau)
        return UpdateStats(td_loss=td_loss, actor=actor_losses)

    def to_bytes(self) -> bytes:
        """Agent header followed by actor, critics, target actor and target critics."""
        fields = {
            "version": AGENT_FORMAT_VERSION,
            "env_id": self.spec.env_id,
            "agent_config": self.config.json(sort_keys=True),
            "alpha_offline": repr(float(self.alpha_offline)),
            "alpha_online": repr(float(self.alpha_online)),
            "n_critics": str(len(self.params.critics)),
        }
        nets = [self.params.actor, *self.params.critics, self.params.target_actor]
        nets += self.params.target_critics
        return encode_header(AGENT_MAGIC, fields) + b"".join(
            net.to_bytes() for net in nets
        )

    def save(self, path: Union[str, Path]) -> None:
        """Write the checkpoint to ``path``."""
        Path(path).write_bytes(self.to_bytes())
        logger.debug("Wrote agent checkpoint %s", path)

    @classmethod
    def from_bytes(cls, buffer: bytes) -> "TD3BCAgent":
        """Decode a checkpoint; optimizer states start fresh."""
        fields, position = decode_header(buffer, 0, AGENT_MAGIC, CheckpointFormatError)
        version = require_field(fields, "version", CheckpointFormatError)
        if version != AGENT_FORMAT_VERSION:
            raise CheckpointFormatError(f"Unsupported agent version {version}")
        try:
            config = AgentConfig.parse_raw(
                require_field(fields, "agent_config", CheckpointFormatError)
            )
            spec = make_spec(require_field(fields, "env_id", CheckpointFormatError))
            n_critics = int(require_field(fields, "n_critics", CheckpointFormatError))
            alpha_offline = float(fields["alpha_offline"])
            alpha_online = float(fields["alpha_online"])
        except (ValueError, KeyError) as error:
            raise CheckpointFormatError(f"Malformed agent header: {error}") from error
        nets: List[DenseNet] = []
        for _ in range(2 * n_critics + 2):
            net, position = DenseNet.from_bytes(buffer, position, config.dtype)
            nets.append(net)
        if position != len(buffer):
            raise CheckpointFormatError(f"{len(buffer) - position} trailing bytes")
        actor, critics = nets[0], nets[1 : n_critics + 1]
        target_actor, target_critics = nets[n_critics + 1], nets[n_critics + 2 :]
        params = AgentParams(
            actor=actor,
            critics=critics,
            target_actor=target_actor,
            target_critics=target_critics,
            actor_opt=_adam(config, actor.params, config.actor_lr),
            critic_opts=[_adam(config, c.params, config.critic_lr) for c in critics],
        )
        return cls(spec, config, params, alpha_offline, alpha_online)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TD3BCAgent":
        """Read a checkpoint written by :meth:`save`."""
        return cls.from_bytes(Path(path).read_bytes())
