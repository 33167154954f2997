"""Test cases for the behavior-cloning weight controller."""
from typing import List

import numpy as np
import pytest
from hypothesis import given
from hypothesis import settings
from hypothesis import strategies as st

from adaptive_td3bc.config import ControllerConfig
from adaptive_td3bc.controller import AlphaController
from adaptive_td3bc.controller import adapt_alpha
from adaptive_td3bc.controller import resolve_target
from adaptive_td3bc.datasets import ReferenceScores
from adaptive_td3bc.exceptions import NonFiniteReturnError


def _warm(r_avg: float, **overrides: float) -> AlphaController:
    controller = AlphaController(**overrides)  # type: ignore[arg-type]
    controller.r_avg = r_avg
    return controller


def test_fixed_point_at_target() -> None:
    """It leaves alpha unchanged when both average and return sit on the target."""
    controller = _warm(1.05, alpha_online=0.2)
    assert adapt_alpha(controller, 1.05) == 0.2
    assert controller.last_delta == 0.0


def test_worked_example() -> None:
    """It applies -0.0275 for r_avg 0.5, target 1.05 and return 0.6."""
    controller = _warm(0.5, kp=0.05, kd=0.1, alpha_online=0.4, alpha_offline=0.4)
    assert adapt_alpha(controller, 0.6) == pytest.approx(0.3725, abs=1e-12)
    assert controller.last_delta == pytest.approx(-0.0275, abs=1e-12)
    assert controller.r_avg == pytest.approx(0.51, abs=1e-12)


def test_clamped_at_zero() -> None:
    """It never lets alpha go negative."""
    controller = _warm(0.0, kp=1.0, alpha_online=0.1)
    assert adapt_alpha(controller, 0.0) == 0.0


def test_clamped_at_alpha_offline() -> None:
    """It never lets alpha exceed the offline weight."""
    controller = _warm(5.0, kp=1.0, kd=1.0, alpha_online=0.4, alpha_offline=0.4)
    assert adapt_alpha(controller, 0.0) == 0.4


def test_drop_in_return_raises_alpha() -> None:
    """It adds the derivative term when the return falls below the average."""
    steady = _warm(1.05, kp=0.0, kd=0.1, alpha_online=0.1)
    assert adapt_alpha(steady, 0.85) == pytest.approx(0.12, abs=1e-12)


@pytest.mark.parametrize("value", [float("nan"), float("inf"), -float("inf")])
def test_non_finite_return_leaves_state(value: float) -> None:
    """It raises and keeps alpha and the average untouched."""
    controller = _warm(0.7, alpha_online=0.3)
    with pytest.raises(NonFiniteReturnError):
        adapt_alpha(controller, value)
    assert controller.alpha_online == 0.3 and controller.r_avg == 0.7
    assert controller.n_updates == 0


def test_first_return_initializes_average() -> None:
    """It seeds the average with the first return before computing the delta."""
    controller = AlphaController(kp=0.1, kd=1.0, alpha_online=0.3)
    adapt_alpha(controller, 0.55)
    assert controller.r_avg == 0.55
    assert controller.last_delta == pytest.approx(0.1 * (0.55 - 1.05), abs=1e-12)
    assert controller.alpha_online == pytest.approx(0.25, abs=1e-12)


def test_window_average() -> None:
    """It averages the most recent returns when using a window."""
    controller = AlphaController(averaging="window", window=2, kp=0.0, kd=0.0)
    for value in (1.0, 2.0, 4.0):
        adapt_alpha(controller, value)
    assert controller.r_avg == 3.0


def test_non_adaptive_controller_keeps_alpha() -> None:
    """It tracks returns but never moves alpha when adaptation is off."""
    controller = AlphaController(adaptive=False, alpha_online=0.1, kp=1.0)
    for value in (0.0, 2.0, -1.0):
        assert adapt_alpha(controller, value) == 0.1
    assert controller.n_updates == 3


def test_from_config_scales_gains() -> None:
    """It multiplies alpha_offline and both gains by bc_scale."""
    config = ControllerConfig(alpha_offline=0.4, kp=0.003, kd=0.1, bc_scale=2.0)
    controller = AlphaController.from_config(config, r_target=0.9)
    assert controller.alpha_offline == pytest.approx(0.8)
    assert controller.alpha_online == pytest.approx(0.8)
    assert (controller.kp, controller.kd) == pytest.approx((0.006, 0.2))
    assert controller.r_target == 0.9


def test_from_config_clamps_initial_alpha() -> None:
    """It starts from alpha_online_init, clipped into [0, alpha_offline]."""
    low = AlphaController.from_config(ControllerConfig(alpha_online_init=0.1), 1.05)
    high = AlphaController.from_config(ControllerConfig(alpha_online_init=3.0), 1.05)
    assert low.alpha_online == 0.1 and high.alpha_online == 0.4


finite = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


def _adapt_checked(controller: AlphaController, value: float) -> None:
    before_avg = value if controller.r_avg is None else controller.r_avg
    before = controller.alpha_online
    after = adapt_alpha(controller, value)
    assert 0.0 <= after <= controller.alpha_offline
    if before_avg < controller.r_target and before_avg <= value:
        assert after <= before
    if before_avg > controller.r_target and before_avg >= value:
        assert after >= before


@settings(max_examples=200)
@given(
    returns=st.lists(finite, min_size=1, max_size=30),
    kp=st.floats(0.0, 1.0),
    kd=st.floats(0.0, 1.0),
    alpha=st.floats(0.0, 1.0),
)
def test_alpha_stays_in_bounds(
    returns: List[float], kp: float, kd: float, alpha: float
) -> None:
    """It keeps alpha within [0, alpha_offline] and respects the sign rules."""
    controller = AlphaController(kp=kp, kd=kd, alpha_offline=1.0, alpha_online=alpha)
    for value in returns:
        _adapt_checked(controller, value)


@pytest.mark.slow
def test_alpha_stays_in_bounds_over_many_sequences() -> None:
    """It holds the bounds and sign rules on every call of 10**5 seeded sequences."""
    rng = np.random.default_rng(2024)
    for _ in range(100_000):
        alpha_offline = float(rng.uniform(0.01, 1.0))
        controller = AlphaController(
            alpha_offline=alpha_offline,
            alpha_online=float(rng.uniform(0.0, alpha_offline)),
            kp=float(rng.uniform(0.0, 1.0)),
            kd=float(rng.uniform(0.0, 1.0)),
            r_target=float(rng.uniform(-1.0, 2.0)),
            averaging="window" if rng.random() < 0.5 else "ema",
            window=int(rng.integers(1, 6)),
        )
        returns = rng.normal(0.5, 1.0, size=int(rng.integers(1, 21)))
        for value in returns.tolist():
            _adapt_checked(controller, value)


@pytest.fixture
def refs() -> ReferenceScores:
    """Scores where r_max * T is twice the expert's distance above random."""
    return ReferenceScores(r_random=-100.0, r_expert=-50.0, r_max_t=0.0, n_episodes=10)


def test_expert_reference_target(refs: ReferenceScores) -> None:
    """It uses 1.05 for the expert-reference mode."""
    assert resolve_target("expert_reference", refs) == 1.05


def test_rmax_target(refs: ReferenceScores) -> None:
    """It normalizes r_max * T for the optimistic mode."""
    assert resolve_target("rmax_times_T", refs) == pytest.approx(2.0)


def test_unknown_target_mode(refs: ReferenceScores) -> None:
    """It rejects unknown modes."""
    with pytest.raises(ValueError):
        resolve_target("oracle", refs)
