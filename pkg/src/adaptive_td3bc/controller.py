"""PD-style adaptation of the online behavior-cloning weight."""
import logging
import math
from collections import deque
from dataclasses import dataclass
from dataclasses import field
from typing import Deque
from typing import Optional

from adaptive_td3bc.config import ControllerConfig
from adaptive_td3bc.datasets import ReferenceScores
from adaptive_td3bc.datasets import normalize_return
from adaptive_td3bc.exceptions import NonFiniteReturnError


logger = logging.getLogger(__name__)

EXPERT_TARGET = 1.05


@dataclass
class AlphaController:
    """Holds alpha_online and the moving average of normalized returns.

    Each completed episode moves alpha by
    ``kp * (r_avg - r_target) + kd * max(0, r_avg - r_current)``, clipped to
    ``[0, alpha_offline]``; the average is folded in afterwards.
    """

    alpha_offline: float = 0.4
    alpha_online: float = 0.4
    kp: float = 0.003
    kd: float = 0.1
    r_target: float = EXPERT_TARGET
    beta: float = 0.1
    averaging: str = "ema"
    window: int = 10
    adaptive: bool = True
    r_avg: Optional[float] = None
    last_delta: float = 0.0
    n_updates: int = 0
    history: Deque[float] = field(default_factory=deque)

    @classmethod
    def from_config(
        cls, config: ControllerConfig, r_target: float
    ) -> "AlphaController":
        """Controller with scaled gains, starting at the configured alpha_online."""
        alpha_offline = config.scaled_alpha_offline
        initial = (
            alpha_offline
            if config.alpha_online_init is None
            else config.alpha_online_init * config.bc_scale
        )
        return cls(
            alpha_offline=alpha_offline,
            alpha_online=min(max(initial, 0.0), alpha_offline),
            kp=config.kp * config.bc_scale,
            kd=config.kd * config.bc_scale,
            r_target=r_target,
            beta=config.beta,
            averaging=config.averaging,
            window=config.window,
            adaptive=config.adaptive,
            history=deque(maxlen=config.window),
        )

    def delta(self, r_current: float) -> float:
        """Proposed change of alpha for a fresh normalized return."""
        r_avg = r_current if self.r_avg is None else self.r_avg
        return self.kp * (r_avg - self.r_target) + self.kd * max(0.0, r_avg - r_current)

    def fold_return(self, r_current: float) -> None:
        """Fold a normalized return into the moving average."""
        if self.averaging == "window":
            if self.history.maxlen != self.window:
                self.history = deque(self.history, maxlen=self.window)
            self.history.append(r_current)
            self.r_avg = math.fsum(self.history) / len(self.history)
        elif self.r_avg is None:
            self.r_avg = r_current
        else:
            self.r_avg = (1.0 - self.beta) * self.r_avg + self.beta * r_current


def adapt_alpha(controller: AlphaController, r_current: float) -> float:
    """Fold one completed episode's normalized return into the controller."""
    if not math.isfinite(r_current):
        raise NonFiniteReturnError(f"Episodic return must be finite, got {r_current}")
    initializing = controller.r_avg is None
    if initializing:
        controller.fold_return(r_current)
    step = controller.delta(r_current) if controller.adaptive else 0.0
    controller.alpha_online = min(
        max(controller.alpha_online + step, 0.0), controller.alpha_offline
    )
    controller.last_delta = step
    if not initializing:
        controller.fold_return(r_current)
    controller.n_updates += 1
    logger.debug(
        "alpha_online=%.5f delta=%.5f r_avg=%.4f r_current=%.4f",
        controller.alpha_online,
        step,
        controller.r_avg,
        r_current,
    )
    return controller.alpha_online


def resolve_target(
    mode: str, refs: ReferenceScores, expert_target: float = EXPERT_TARGET
) -> float:
    """Normalized target return for ``expert_reference`` or ``rmax_times_T``."""
    if mode == "expert_reference":
        return expert_target
    if mode == "rmax_times_T":
        return normalize_return(refs.r_max_t, refs)
    raise ValueError(f"Unknown target mode {mode!r}")
