"""Adam optimizer state and update rule."""
from dataclasses import dataclass
from dataclasses import field
from typing import List
from typing import Sequence
from typing import Tuple

import numpy as np

from adaptive_td3bc.exceptions import ShapeError


@dataclass
class AdamState:
    """First and second moment accumulators plus the step counter."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    first_moment: List[np.ndarray] = field(default_factory=list)
    second_moment: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(
        cls,
        params: Sequence[np.ndarray],
        lr: float = 3e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> "AdamState":
        """Fresh state with zero moments shaped like ``params``."""
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            first_moment=[np.zeros_like(param, dtype=np.float64) for param in params],
            second_moment=[np.zeros_like(param, dtype=np.float64) for param in params],
        )


def adam_step(
    params: List[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> Tuple[List[np.ndarray], AdamState]:
    """Apply one bias-corrected Adam descent step to ``params`` in place."""
    if len(grads) != len(params):
        raise ShapeError(f"Got {len(grads)} gradients for {len(params)} parameters")
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.second_moment = [np.zeros_like(p, dtype=np.float64) for p in params]
    for param, grad, first in zip(params, grads, state.first_moment):
        if param.shape != np.shape(grad) or param.shape != first.shape:
            raise ShapeError(
                f"Shape mismatch: param {param.shape}, grad {np.shape(grad)}, "
                f"state {first.shape}"
            )
    state.t += 1
    correction1 = 1.0 - state.beta1**state.t
    correction2 = 1.0 - state.beta2**state.t
    for index, (param, grad) in enumerate(zip(params, grads)):
        first = state.first_moment[index]
        second = state.second_moment[index]
        first *= state.beta1
        first += (1.0 - state.beta1) * grad
        second *= state.beta2
        second += (1.0 - state.beta2) * np.square(grad)
        m_hat = first / correction1
        v_hat = second / correction2
        param -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(
            param.dtype, copy=False
        )
    return params, state
