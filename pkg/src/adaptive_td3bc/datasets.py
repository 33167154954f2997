"""Offline datasets, reference scores and return normalization."""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any
from typing import Dict
from typing import List
from typing import Sequence
from typing import Tuple
from typing import Union

import numpy as np
from pydantic import BaseModel
from pydantic import Field
from pydantic import root_validator

from adaptive_td3bc.envs import Transition
from adaptive_td3bc.envs import make_spec
from adaptive_td3bc.exceptions import DatasetFormatError
from adaptive_td3bc.exceptions import InvalidReferenceScoresError
from adaptive_td3bc.exceptions import UnknownEnvironmentError
from adaptive_td3bc.helpers import decode_header
from adaptive_td3bc.helpers import encode_header
from adaptive_td3bc.helpers import pack_array
from adaptive_td3bc.helpers import require_field
from adaptive_td3bc.helpers import unpack_array


logger = logging.getLogger(__name__)

DATASET_MAGIC = "ADAPTIVE-TD3BC-DATASET"
DATASET_FORMAT_VERSION = "1"


class ReferenceScores(BaseModel):
    """Returns that anchor normalization: 0 is random, 1 is expert."""

    r_random: float = Field(description="mean return of the uniform-random policy")
    r_expert: float = Field(description="mean return of the trained expert")
    r_max_t: float = Field(description="maximal per-step reward times T")
    n_episodes: int = Field(description="evaluation episodes behind each mean")

    class Config:
        """Scores are immutable."""

        allow_mutation = False

    @root_validator(skip_on_failure=True)
    def check_scores(cls, values: Dict[str, Any]) -> Dict[str, Any]:  # noqa: N805
        """Both finite and expert strictly above random."""
        r_random, r_expert = values["r_random"], values["r_expert"]
        if not (math.isfinite(r_random) and math.isfinite(r_expert)):
            raise ValueError("reference returns must be finite")
        if r_expert <= r_random:
            raise ValueError(
                f"r_expert ({r_expert}) must exceed r_random ({r_random})"
            )
        return values


def normalize_return(episodic_return: float, refs: ReferenceScores) -> float:
    """``(R - R_random) / (R_expert - R_random)`` on unit scale."""
    span = refs.r_expert - refs.r_random
    if span <= 0.0:
        raise InvalidReferenceScoresError("r_expert must exceed r_random")
    return (episodic_return - refs.r_random) / span


@dataclass
class OfflineDataset:
    """Transitions with episode boundaries and embedded reference scores."""

    env_id: str
    tier: str
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    terminals: np.ndarray
    episode_starts: np.ndarray
    refs: ReferenceScores
    seed: int = 0

    def __post_init__(self) -> None:
        """Check shapes, bounds and that episode starts partition the data."""
        spec = make_spec(self.env_id)
        n = self.rewards.shape[0]
        expected = {
            "observations": (n, spec.obs_dim),
            "actions": (n, spec.act_dim),
            "next_observations": (n, spec.obs_dim),
            "terminals": (n,),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise ValueError(f"{name} has shape {actual}, not {shape}")
        starts = np.asarray(self.episode_starts, dtype=np.int64)
        if n and (starts.size == 0 or starts[0] != 0):
            raise ValueError("episode_starts must begin at 0")
        if np.any(np.diff(starts) <= 0) or (starts.size and starts[-1] >= max(n, 1)):
            raise ValueError("episode_starts must be strictly increasing and in range")
        lengths = np.diff(np.append(starts, n))
        if lengths.size and lengths.max() > spec.max_steps:
            raise ValueError(f"episode longer than T = {spec.max_steps}")
        tolerance = 1e-6
        if n and (
            np.any(self.actions < spec.low - tolerance)
            or np.any(self.actions > spec.high + tolerance)
        ):
            raise ValueError("actions outside the action bounds")
        self.episode_starts = starts

    @property
    def n_transitions(self) -> int:
        """Number of stored transitions."""
        return int(self.rewards.shape[0])

    @property
    def n_episodes(self) -> int:
        """Number of episodes (the last may be cut short)."""
        return int(self.episode_starts.size)

    def episode_bounds(self) -> List[Tuple[int, int]]:
        """``(start, stop)`` index pairs of every episode."""
        stops = np.append(self.episode_starts[1:], self.n_transitions)
        return [(int(a), int(b)) for a, b in zip(self.episode_starts, stops)]

    def episode_returns(self) -> np.ndarray:
        """Undiscounted return of every episode."""
        rewards = self.rewards.astype(np.float64)
        return np.array(
            [math.fsum(rewards[start:stop]) for start, stop in self.episode_bounds()]
        )

    def normalized_returns(self) -> np.ndarray:
        """Episode returns on the reference scale."""
        return np.array(
            [normalize_return(value, self.refs) for value in self.episode_returns()]
        )

    @classmethod
    def from_episodes(
        cls,
        env_id: str,
        tier: str,
        episodes: Sequence[Sequence[Transition]],
        refs: ReferenceScores,
        seed: int = 0,
    ) -> "OfflineDataset":
        """Stack episode transition lists into column arrays."""
        spec = make_spec(env_id)
        flat = [transition for episode in episodes for transition in episode]
        lengths = [len(episode) for episode in episodes if len(episode) > 0]
        starts = np.cumsum([0] + lengths[:-1]) if lengths else np.zeros(0)

        def column(name: str, width: int) -> np.ndarray:
            if not flat:
                return np.zeros((0, width), dtype=np.float32)
            return np.array(
                [getattr(transition, name) for transition in flat], dtype=np.float32
            ).reshape(len(flat), width)

        return cls(
            env_id=env_id,
            tier=tier,
            observations=column("obs", spec.obs_dim),
            actions=column("action", spec.act_dim),
            rewards=np.array([t.reward for t in flat], dtype=np.float32),
            next_observations=column("next_obs", spec.obs_dim),
            terminals=np.array([t.terminal for t in flat], dtype=np.float32),
            episode_starts=starts.astype(np.int64),
            refs=refs,
            seed=seed,
        )


def save_dataset(dataset: OfflineDataset, path: Union[str, Path]) -> None:
    """Write a text header followed by 32-bit little-endian column arrays."""
    spec = make_spec(dataset.env_id)
    fields = {
        "version": DATASET_FORMAT_VERSION,
        "env_id": dataset.env_id,
        "tier": dataset.tier,
        "obs_dim": str(spec.obs_dim),
        "act_dim": str(spec.act_dim),
        "T": str(spec.max_steps),
        "r_max": repr(spec.r_max),
        "r_random": repr(dataset.refs.r_random),
        "r_expert": repr(dataset.refs.r_expert),
        "r_max_t": repr(dataset.refs.r_max_t),
        "reference_episodes": str(dataset.refs.n_episodes),
        "n_transitions": str(dataset.n_transitions),
        "n_episodes": str(dataset.n_episodes),
        "seed": str(dataset.seed),
        "env": spec.summary(),
    }
    payload = b"".join(
        [
            pack_array(dataset.observations),
            pack_array(dataset.actions),
            pack_array(dataset.rewards),
            pack_array(dataset.next_observations),
            pack_array(dataset.terminals),
            pack_array(dataset.episode_starts, "<i4"),
        ]
    )
    Path(path).write_bytes(encode_header(DATASET_MAGIC, fields) + payload)
    logger.info(
        "Wrote %s/%s dataset with %d transitions to %s",
        dataset.env_id,
        dataset.tier,
        dataset.n_transitions,
        path,
    )


def load_dataset(path: Union[str, Path]) -> OfflineDataset:
    """Read a dataset written by :func:`save_dataset`; nothing partial is returned."""
    dataset_path = Path(path)
    if not dataset_path.is_file():
        raise FileNotFoundError(f"Dataset file not found: {dataset_path}")
    buffer = dataset_path.read_bytes()
    fields, position = decode_header(buffer, 0, DATASET_MAGIC, DatasetFormatError)

    def field(key: str) -> str:
        return require_field(fields, key, DatasetFormatError)

    if field("version") != DATASET_FORMAT_VERSION:
        raise DatasetFormatError(f"Unsupported dataset version {fields['version']}")
    try:
        spec = make_spec(field("env_id"))
    except UnknownEnvironmentError as error:
        raise DatasetFormatError(str(error)) from error
    try:
        obs_dim, act_dim = int(field("obs_dim")), int(field("act_dim"))
        n, n_episodes = int(field("n_transitions")), int(field("n_episodes"))
        refs = ReferenceScores(
            r_random=float(field("r_random")),
            r_expert=float(field("r_expert")),
            r_max_t=float(field("r_max_t")),
            n_episodes=int(field("reference_episodes")),
        )
        seed = int(field("seed"))
    except ValueError as error:
        raise DatasetFormatError(f"Malformed dataset header: {error}") from error
    if (obs_dim, act_dim) != (spec.obs_dim, spec.act_dim):
        raise DatasetFormatError(
            f"Header dims {(obs_dim, act_dim)} do not match {spec.env_id}"
        )
    observations, position = unpack_array(
        buffer, position, (n, obs_dim), error_cls=DatasetFormatError
    )
    actions, position = unpack_array(
        buffer, position, (n, act_dim), error_cls=DatasetFormatError
    )
    rewards, position = unpack_array(
        buffer, position, (n,), error_cls=DatasetFormatError
    )
    next_observations, position = unpack_array(
        buffer, position, (n, obs_dim), error_cls=DatasetFormatError
    )
    terminals, position = unpack_array(
        buffer, position, (n,), error_cls=DatasetFormatError
    )
    starts, position = unpack_array(
        buffer, position, (n_episodes,), "<i4", DatasetFormatError
    )
    if position != len(buffer):
        raise DatasetFormatError(
            f"Length mismatch: {len(buffer) - position} unexpected trailing bytes"
        )
    try:
        return OfflineDataset(
            env_id=spec.env_id,
            tier=field("tier"),
            observations=observations,
            actions=actions,
            rewards=rewards,
            next_observations=next_observations,
            terminals=terminals,
            episode_starts=starts.astype(np.int64),
            refs=refs,
            seed=seed,
        )
    except ValueError as error:
        raise DatasetFormatError(f"Inconsistent dataset contents: {error}") from error
