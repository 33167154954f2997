"""Ring-buffer replay with uniform sampling and offline-sample downsampling."""
import logging
import math
from typing import Optional

import numpy as np

from adaptive_td3bc.agent import Batch
from adaptive_td3bc.datasets import OfflineDataset
from adaptive_td3bc.envs import Transition
from adaptive_td3bc.exceptions import ShapeError


logger = logging.getLogger(__name__)

OFFLINE = 0
ONLINE = 1
ORIGINS = {"offline": OFFLINE, "online": ONLINE}


class ReplayBuffer:
    """A bounded FIFO store of transitions tagged with their origin.

    Live data always occupies slots ``[0, size)``; once full, the oldest
    transition sits at ``ptr``.
    """

    def __init__(
        self,
        obs_dim: int,
        act_dim: int,
        capacity: int = 1_100_000,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        """Allocate empty storage."""
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.actions = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rewards = np.zeros(capacity, dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.terminals = np.zeros(capacity, dtype=np.float32)
        self.origins = np.zeros(capacity, dtype=np.uint8)
        self.episode_ids = np.zeros(capacity, dtype=np.int64)
        self.episode_returns = np.full(capacity, np.nan, dtype=np.float64)
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        """Number of stored transitions."""
        return self.size

    def push(
        self,
        transition: Transition,
        origin: str = "online",
        episode_id: int = -1,
        episode_return: float = math.nan,
    ) -> None:
        """Append one transition, evicting the oldest when full."""
        slot = self.ptr
        self.obs[slot] = transition.obs
        self.actions[slot] = transition.action
        self.rewards[slot] = transition.reward
        self.next_obs[slot] = transition.next_obs
        self.terminals[slot] = float(transition.terminal)
        self.origins[slot] = ORIGINS[origin]
        self.episode_ids[slot] = episode_id
        self.episode_returns[slot] = episode_return
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def add_dataset(self, dataset: OfflineDataset) -> None:
        """Push every dataset transition tagged offline, with its episode return."""
        if dataset.observations.shape[1] != self.obs_dim:
            raise ShapeError("Dataset observation width does not match the buffer")
        returns = dataset.episode_returns()
        for episode, (start, stop) in enumerate(dataset.episode_bounds()):
            for index in range(start, stop):
                self.push(
                    Transition(
                        dataset.observations[index],
                        dataset.actions[index],
                        float(dataset.rewards[index]),
                        dataset.next_observations[index],
                        bool(dataset.terminals[index]),
                    ),
                    origin="offline",
                    episode_id=episode,
                    episode_return=float(returns[episode]),
                )
        logger.info("Loaded %d offline transitions into replay", dataset.n_transitions)

    def chronological(self) -> np.ndarray:
        """Slot indices from oldest to newest."""
        start = (self.ptr - self.size) % self.capacity
        return (start + np.arange(self.size)) % self.capacity

    def count(self, origin: str) -> int:
        """Number of live transitions with the given origin."""
        return int(np.sum(self.origins[: self.size] == ORIGINS[origin]))

    def sample_minibatch(self, batch_size: int, rng: np.random.Generator) -> Batch:
        """Draw ``batch_size`` transitions uniformly with replacement."""
        if self.size == 0:
            raise ValueError("Cannot sample from an empty replay buffer")
        indices = rng.integers(0, self.size, size=batch_size)
        return self.gather(indices)

    def gather(self, indices: np.ndarray) -> Batch:
        """Batch of the transitions stored at ``indices``."""
        return Batch(
            obs=self.obs[indices],
            actions=self.actions[indices],
            rewards=self.rewards[indices],
            next_obs=self.next_obs[indices],
            terminals=self.terminals[indices],
        )

    def downsample(self, keep_fraction: float, mode: str = "random") -> "ReplayBuffer":
        """Thin the offline-tagged transitions once, leaving online ones untouched.

        ``random`` keeps a uniform subset of ``floor(keep_fraction * n_offline)``
        transitions; ``prioritized`` keeps whole trajectories by decreasing
        episodic return until at least that many are kept.
        """
        if not 0.0 <= keep_fraction <= 1.0:
            raise ValueError(f"keep_fraction must lie in [0, 1], got {keep_fraction}")
        order = self.chronological()
        offline = order[self.origins[order] == OFFLINE]
        n_offline = offline.size
        target = math.floor(keep_fraction * n_offline + 1e-9)
        if target >= n_offline:
            return self
        if mode == "random":
            kept = self.rng.choice(offline, size=target, replace=False)
        elif mode == "prioritized":
            kept = self._prioritized(offline, target)
        else:
            raise ValueError(f"Unknown downsample mode {mode!r}")
        keep_mask = np.zeros(self.capacity, dtype=bool)
        keep_mask[kept] = True
        keep_mask[order[self.origins[order] == ONLINE]] = True
        survivors = order[keep_mask[order]]
        self._compact(survivors)
        logger.info(
            "Downsampled offline data (%s): %d -> %d transitions",
            mode,
            n_offline,
            self.count("offline"),
        )
        return self

    def _prioritized(self, offline: np.ndarray, target: int) -> np.ndarray:
        episode_ids = self.episode_ids[offline]
        unique_ids, first = np.unique(episode_ids, return_index=True)
        returns = self.episode_returns[offline][first]
        ranking = sorted(
            range(unique_ids.size),
            key=lambda index: (-returns[index], unique_ids[index]),
        )
        chosen = []
        kept = 0
        for index in ranking:
            if kept >= target:
                break
            chosen.append(unique_ids[index])
            kept += int(np.sum(episode_ids == unique_ids[index]))
        return offline[np.isin(episode_ids, chosen)]

    def _compact(self, survivors: np.ndarray) -> None:
        columns = (
            "obs",
            "actions",
            "rewards",
            "next_obs",
            "terminals",
            "origins",
            "episode_ids",
            "episode_returns",
        )
        count = survivors.size
        for name in columns:
            column = getattr(self, name)
            column[:count] = column[survivors]
        self.size = count
        self.ptr = count % self.capacity
