"""Test cases for fine-tuning sweeps."""
from pathlib import Path
from typing import Dict

import pandas as pd

from adaptive_td3bc.agent import TD3BCAgent
from adaptive_td3bc.config import build_config
from adaptive_td3bc.config import parse_config_text
from adaptive_td3bc.datasets import OfflineDataset
from adaptive_td3bc.sweeps import member_config
from adaptive_td3bc.sweeps import run_sweep
from adaptive_td3bc.sweeps import sweep_members


def test_alpha_members() -> None:
    """It fixes alpha_online per member and ends with the adaptive member."""
    members = sweep_members(build_config({"sweep.alphas": "0.0,0.1,0.3"}))
    assert [m.label for m in members] == [
        "alpha-0.0",
        "alpha-0.1",
        "alpha-0.3",
        "alpha-adaptive",
    ]
    assert members[-1].overrides == {"controller.adaptive": "true"}
    assert members[-1].checkpoint_name == "alpha-adaptive.ckpt"
    assert members[0].curve_name == "curve_alpha-0.0.csv"
    assert members[1].overrides == {
        "controller.adaptive": "false",
        "controller.alpha_online_init": "0.1",
    }


def test_alpha_sweep_without_adaptive_arm() -> None:
    """It keeps only the fixed-alpha members when the adaptive arm is off."""
    config = build_config({"sweep.adaptive_arm": "false"})
    labels = [m.label for m in sweep_members(config)]
    assert labels == ["alpha-0.0", "alpha-0.1", "alpha-0.3"]


def test_gain_grid_is_a_product() -> None:
    """It visits every (K_P, K_D) pair."""
    config = build_config(
        {"sweep.kind": "gains", "sweep.kps": "0.001,0.01", "sweep.kds": "0.1,0.3"}
    )
    labels = [m.label for m in sweep_members(config)]
    assert labels == [
        "gains-0.001-0.1",
        "gains-0.001-0.3",
        "gains-0.01-0.1",
        "gains-0.01-0.3",
    ]


def test_twin_member_resizes_the_ensemble() -> None:
    """It switches the twin member to two critics so the config validates."""
    config = build_config({"sweep.kind": "ensemble"})
    members = {m.label: m for m in sweep_members(config)}
    assert set(members) == {
        "ensemble-redq_random_pair",
        "ensemble-full_min",
        "ensemble-twin",
    }
    twin = member_config(config, members["ensemble-twin"])
    assert twin.agent.n_critics == 2 and twin.agent.ensemble_mode == "twin"
    full = member_config(config, members["ensemble-full_min"])
    assert full.agent.n_critics == 10


def test_downsample_and_target_labels() -> None:
    """It labels members by mode and ratio."""
    downsample = build_config(
        {"sweep.kind": "downsample", "sweep.keep_fractions": "0.05,1.0"}
    )
    assert [m.label for m in sweep_members(downsample)] == [
        "downsample-random-0.05",
        "downsample-random-1.0",
        "downsample-prioritized-0.05",
        "downsample-prioritized-1.0",
    ]
    target = build_config({"sweep.kind": "target"})
    assert [m.label for m in sweep_members(target)] == [
        "target-expert_reference",
        "target-rmax_times_T",
    ]


def test_run_sweep_writes_one_curve_per_member(
    tiny_values: Dict[str, str], random_dataset: OfflineDataset, tmp_path: Path
) -> None:
    """It leaves a curve, a checkpoint and a resolved config for each member."""
    config = build_config({**tiny_values, "sweep.alphas": "0.0,0.2"})
    curves = run_sweep(config, random_dataset, tmp_path / "sweep")
    assert set(curves) == {"alpha-0.0", "alpha-0.2", "alpha-adaptive"}
    frame = pd.read_csv(tmp_path / "sweep" / "curve_alpha-0.2.csv")
    assert set(frame["phase"]) == {"online"}
    assert set(frame["alpha_online"].dropna()) == {0.2}
    for member in sweep_members(config):
        assert (tmp_path / "sweep" / member.curve_name).is_file()
        text = (tmp_path / "sweep" / member.config_name).read_text()
        assert build_config(parse_config_text(text)) == member_config(config, member)
    agent = TD3BCAgent.load(tmp_path / "sweep" / "alpha-0.2.ckpt")
    assert agent.alpha_online == 0.2
    assert agent.spec.env_id == "pointmass"


def test_ensemble_sweep_pretrains_each_member(
    tiny_values: Dict[str, str], random_dataset: OfflineDataset, tmp_path: Path
) -> None:
    """It prepends each ensemble member's own offline curve."""
    config = build_config(
        {
            **tiny_values,
            "sweep.kind": "ensemble",
            "sweep.ensemble_modes": "full_min,twin",
        }
    )
    run_sweep(config, random_dataset, tmp_path)
    for mode in ("full_min", "twin"):
        frame = pd.read_csv(tmp_path / f"curve_ensemble-{mode}.csv")
        assert list(frame["phase"].unique()) == ["offline", "online"]
