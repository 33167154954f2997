"""Built-in, seedable continuous-control environments."""
import math
from dataclasses import dataclass
from typing import Any
from typing import Callable
from typing import Dict
from typing import Iterable
from typing import List
from typing import NamedTuple
from typing import Tuple

import numpy as np
from pydantic import BaseModel
from pydantic import Field
from pydantic import root_validator

from adaptive_td3bc.exceptions import EpisodeFinishedError
from adaptive_td3bc.exceptions import ShapeError
from adaptive_td3bc.exceptions import UnknownEnvironmentError


Policy = Callable[[np.ndarray], np.ndarray]

GRAVITY = 10.0
PENDULUM_MASS = 1.0
PENDULUM_LENGTH = 1.0
PENDULUM_MAX_SPEED = 8.0
POINTMASS_DAMPING = 0.98


class EnvSpec(BaseModel):
    """Static description of an environment."""

    env_id: str = Field(description="stable environment identifier")
    obs_dim: int = Field(description="observation vector length")
    act_dim: int = Field(description="action vector length")
    action_low: Tuple[float, ...] = Field(description="per-dimension action minimum")
    action_high: Tuple[float, ...] = Field(description="per-dimension action maximum")
    max_steps: int = Field(description="episode time limit T")
    r_max: float = Field(description="upper bound on every per-step reward")
    dt: float = Field(description="integration time step")

    class Config:
        """Specs are immutable."""

        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def check_bounds(cls, values: Dict[str, Any]) -> Dict[str, Any]:  # noqa: N805
        """Action bounds must be ordered and the horizon positive."""
        low, high = values["action_low"], values["action_high"]
        if len(low) != values["act_dim"] or len(high) != values["act_dim"]:
            raise ValueError("action bounds must have act_dim entries")
        if any(lo >= hi for lo, hi in zip(low, high)):
            raise ValueError("action_low must be below action_high elementwise")
        if values["max_steps"] < 1:
            raise ValueError("max_steps must be at least 1")
        return values

    @property
    def low(self) -> np.ndarray:
        """Action minimum as an array."""
        return np.array(self.action_low, dtype=np.float64)

    @property
    def high(self) -> np.ndarray:
        """Action maximum as an array."""
        return np.array(self.action_high, dtype=np.float64)

    @property
    def half_range(self) -> np.ndarray:
        """Half-width of the action box (the TD3 ``max_action`` scale)."""
        return (self.high - self.low) / 2.0

    def clip_action(self, action: np.ndarray) -> np.ndarray:
        """Clip an action into the box."""
        return np.clip(np.asarray(action, dtype=np.float64), self.low, self.high)

    def summary(self) -> str:
        """One-line text description used in dataset headers and logs."""
        return (
            f"{self.env_id}: obs_dim={self.obs_dim} act_dim={self.act_dim} "
            f"T={self.max_steps} r_max={self.r_max} dt={self.dt}"
        )


ENV_SPECS: Dict[str, EnvSpec] = {
    "pendulum": EnvSpec(
        env_id="pendulum",
        obs_dim=3,
        act_dim=1,
        action_low=(-2.0,),
        action_high=(2.0,),
        max_steps=200,
        r_max=0.0,
        dt=0.05,
    ),
    "pointmass": EnvSpec(
        env_id="pointmass",
        obs_dim=4,
        act_dim=2,
        action_low=(-1.0, -1.0),
        action_high=(1.0, 1.0),
        max_steps=100,
        r_max=0.0,
        dt=0.1,
    ),
}


def make_spec(env_id: str) -> EnvSpec:
    """Look up a registered environment."""
    try:
        return ENV_SPECS[env_id]
    except KeyError:
        raise UnknownEnvironmentError(
            f"Unknown env_id {env_id!r}, expected one of {sorted(ENV_SPECS)}"
        ) from None


@dataclass
class EnvState:
    """Mutable state of one running episode."""

    spec: EnvSpec
    physics: np.ndarray
    rng: np.random.Generator
    t: int = 0
    finished: bool = False

    def observe(self) -> np.ndarray:
        """Observation of the current physical state."""
        return _OBSERVERS[self.spec.env_id](self.physics)


@dataclass(frozen=True)
class Transition:
    """One environment step ``(s, a, r, s', terminal)``."""

    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    terminal: bool


class StepResult(NamedTuple):
    """Outcome of :func:`env_step`."""

    obs: np.ndarray
    reward: float
    terminal: bool
    truncated: bool


def wrap_angle(theta: float) -> float:
    """Wrap an angle into ``(-pi, pi]``."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


def _pendulum_observe(physics: np.ndarray) -> np.ndarray:
    theta, theta_dot = physics
    return np.array([math.cos(theta), math.sin(theta), theta_dot], dtype=np.float64)


def _pointmass_observe(physics: np.ndarray) -> np.ndarray:
    return physics.copy()


def _pendulum_reset(rng: np.random.Generator) -> np.ndarray:
    theta = rng.uniform(-math.pi, math.pi)
    theta_dot = rng.uniform(-1.0, 1.0)
    return np.array([theta, theta_dot], dtype=np.float64)


def _pointmass_reset(rng: np.random.Generator) -> np.ndarray:
    position = rng.uniform(-1.0, 1.0, size=2)
    return np.concatenate([position, np.zeros(2)])


def _pendulum_dynamics(
    physics: np.ndarray, action: np.ndarray, dt: float
) -> Tuple[np.ndarray, float]:
    theta, theta_dot = float(physics[0]), float(physics[1])
    torque = float(action[0])
    reward = -(wrap_angle(theta) ** 2 + 0.1 * theta_dot**2 + 0.001 * torque**2)
    theta_ddot = 3.0 * GRAVITY / (2.0 * PENDULUM_LENGTH) * math.sin(
        theta
    ) + 3.0 * torque / (PENDULUM_MASS * PENDULUM_LENGTH**2)
    theta_dot = min(
        max(theta_dot + theta_ddot * dt, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED
    )
    theta = theta + theta_dot * dt
    return np.array([theta, theta_dot], dtype=np.float64), reward


def _pointmass_dynamics(
    physics: np.ndarray, action: np.ndarray, dt: float
) -> Tuple[np.ndarray, float]:
    position, velocity = physics[:2], physics[2:]
    velocity = POINTMASS_DAMPING * (velocity + action * dt)
    position = position + velocity * dt
    reward = -float(np.linalg.norm(position)) - 0.01 * float(np.dot(action, action))
    return np.concatenate([position, velocity]), reward


_OBSERVERS: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "pendulum": _pendulum_observe,
    "pointmass": _pointmass_observe,
}
_RESETTERS: Dict[str, Callable[[np.random.Generator], np.ndarray]] = {
    "pendulum": _pendulum_reset,
    "pointmass": _pointmass_reset,
}
Dynamics = Callable[[np.ndarray, np.ndarray, float], Tuple[np.ndarray, float]]
_DYNAMICS: Dict[str, Dynamics] = {
    "pendulum": _pendulum_dynamics,
    "pointmass": _pointmass_dynamics,
}


def env_reset(spec: EnvSpec, seed: int) -> Tuple[EnvState, np.ndarray]:
    """Start an episode from the environment's initial-state distribution."""
    if spec.env_id not in _RESETTERS:
        raise UnknownEnvironmentError(f"No dynamics registered for {spec.env_id!r}")
    rng = np.random.default_rng(seed)
    state = EnvState(spec=spec, physics=_RESETTERS[spec.env_id](rng), rng=rng)
    return state, state.observe()


def env_step(state: EnvState, action: np.ndarray) -> StepResult:
    """Advance one step with the clipped action; never terminal, truncated at T."""
    if state.finished:
        raise EpisodeFinishedError(
            f"{state.spec.env_id} episode already finished at step {state.t}"
        )
    action = np.asarray(action, dtype=np.float64).reshape(-1)
    if action.shape != (state.spec.act_dim,):
        raise ShapeError(
            f"Action must have length {state.spec.act_dim}, got {action.shape}"
        )
    clipped = state.spec.clip_action(action)
    state.physics, reward = _DYNAMICS[state.spec.env_id](
        state.physics, clipped, state.spec.dt
    )
    state.t += 1
    truncated = state.t >= state.spec.max_steps
    state.finished = truncated
    return StepResult(state.observe(), reward, False, truncated)


def episode_return(rewards: Iterable[float]) -> float:
    """Undiscounted sum of an episode's rewards."""
    return math.fsum(rewards)


def random_action(spec: EnvSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample an action uniformly from the action box."""
    return rng.uniform(spec.low, spec.high)


def run_episode(
    spec: EnvSpec, policy: Policy, seed: int, max_steps: int = 0
) -> Tuple[List[Transition], float]:
    """Roll out ``policy`` for one episode; ``max_steps`` > 0 cuts it short."""
    state, obs = env_reset(spec, seed)
    limit = max_steps if max_steps > 0 else spec.max_steps
    transitions: List[Transition] = []
    rewards: List[float] = []
    while not state.finished and len(transitions) < limit:
        action = spec.clip_action(policy(obs))
        result = env_step(state, action)
        transitions.append(
            Transition(obs, action, result.reward, result.obs, result.terminal)
        )
        rewards.append(result.reward)
        obs = result.obs
    return transitions, episode_return(rewards)
