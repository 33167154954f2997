"""Central finite-difference verification of analytic gradients."""
from typing import Callable
from typing import Sequence

import numpy as np
from pydantic import BaseModel
from pydantic import Field

from adaptive_td3bc.exceptions import ShapeError
from adaptive_td3bc.nn.network import DenseNet


class GradCheckReport(BaseModel):
    """Outcome of comparing analytic and numerical gradients."""

    max_rel_error: float = Field(description="largest relative error over entries")
    worst_param: int = Field(description="index of the parameter array holding it")
    worst_index: int = Field(description="flat index of the worst entry")
    n_checked: int = Field(description="number of scalar entries compared")
    tolerance: float = Field(description="tolerance the check was run with")
    passed: bool = Field(description="max_rel_error <= tolerance")


def finite_diff_check(
    net: DenseNet,
    loss_fn: Callable[[DenseNet], float],
    analytic_grads: Sequence[np.ndarray],
    tolerance: float = 1e-4,
    step: float = 1e-5,
    abs_floor: float = 1e-6,
) -> GradCheckReport:
    """Compare ``analytic_grads`` with central differences of ``loss_fn``.

    The relative error of an entry is ``|a - n| / max(|a|, |n|, abs_floor)``.
    Perturbations happen on a float64 copy, so ``net`` is never touched.
    """
    if len(analytic_grads) != len(net.params):
        raise ShapeError(
            f"Got {len(analytic_grads)} gradients for {len(net.params)} parameters"
        )
    shadow = net.astype(np.float64)
    worst, worst_param, worst_index, n_checked = 0.0, 0, 0, 0
    for param_index, param in enumerate(shadow.params):
        analytic = np.asarray(analytic_grads[param_index], dtype=np.float64)
        if analytic.shape != param.shape:
            raise ShapeError(
                f"Gradient {param_index} has shape {analytic.shape}, "
                f"parameter has {param.shape}"
            )
        flat = param.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            shadow.mark_updated()
            plus = float(loss_fn(shadow))
            flat[index] = original - step
            shadow.mark_updated()
            minus = float(loss_fn(shadow))
            flat[index] = original
            shadow.mark_updated()
            numeric = (plus - minus) / (2.0 * step)
            denominator = max(abs(flat_grad[index]), abs(numeric), abs_floor)
            error = abs(flat_grad[index] - numeric) / denominator
            n_checked += 1
            if error > worst:
                worst, worst_param, worst_index = error, param_index, index
    return GradCheckReport(
        max_rel_error=worst,
        worst_param=worst_param,
        worst_index=worst_index,
        n_checked=n_checked,
        tolerance=tolerance,
        passed=worst <= tolerance,
    )
