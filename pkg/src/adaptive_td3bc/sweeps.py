"""Grid sweeps over fine-tuning settings."""
import logging
from pathlib import Path
from typing import Dict
from typing import List
from typing import NamedTuple
from typing import Optional
from typing import Union

from adaptive_td3bc.agent import TD3BCAgent
from adaptive_td3bc.config import RunConfig
from adaptive_td3bc.config import build_config
from adaptive_td3bc.config import flatten_config
from adaptive_td3bc.config import write_config
from adaptive_td3bc.datasets import OfflineDataset
from adaptive_td3bc.training import LearningCurve
from adaptive_td3bc.training import finetune_online
from adaptive_td3bc.training import pretrain_offline


logger = logging.getLogger(__name__)


class SweepMember(NamedTuple):
    """One grid point: a file-name label and the config keys it changes."""

    label: str
    overrides: Dict[str, str]

    @property
    def curve_name(self) -> str:
        """File name of the member's learning curve."""
        return f"curve_{self.label}.csv"

    @property
    def checkpoint_name(self) -> str:
        """File name of the member's fine-tuned agent."""
        return f"{self.label}.ckpt"

    @property
    def config_name(self) -> str:
        """File name of the member's resolved configuration."""
        return f"{self.label}_config.txt"


def _text(value: object) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def sweep_members(config: RunConfig) -> List[SweepMember]:
    """Grid points of ``config.sweep.kind``."""
    sweep = config.sweep
    if sweep.kind == "alpha":
        members = [
            SweepMember(
                f"alpha-{_text(alpha)}",
                {
                    "controller.adaptive": "false",
                    "controller.alpha_online_init": _text(alpha),
                },
            )
            for alpha in sweep.alphas
        ]
        if sweep.adaptive_arm:
            adaptive = {"controller.adaptive": "true"}
            members.append(SweepMember("alpha-adaptive", adaptive))
        return members
    if sweep.kind == "gains":
        return [
            SweepMember(
                f"gains-{_text(kp)}-{_text(kd)}",
                {"controller.kp": _text(kp), "controller.kd": _text(kd)},
            )
            for kp in sweep.kps
            for kd in sweep.kds
        ]
    if sweep.kind == "downsample":
        return [
            SweepMember(
                f"downsample-{mode}-{_text(fraction)}",
                {
                    "replay.downsample_mode": mode,
                    "replay.keep_fraction": _text(fraction),
                },
            )
            for mode in sweep.downsample_modes
            for fraction in sweep.keep_fractions
        ]
    if sweep.kind == "ensemble":
        members = []
        for mode in sweep.ensemble_modes:
            overrides = {"agent.ensemble_mode": mode}
            if mode == "twin":
                overrides.update({"agent.n_critics": "2", "agent.target_subset": "2"})
            members.append(SweepMember(f"ensemble-{mode}", overrides))
        return members
    return [
        SweepMember(f"target-{mode}", {"controller.target_mode": mode})
        for mode in sweep.target_modes
    ]


def member_config(config: RunConfig, member: SweepMember) -> RunConfig:
    """``config`` with the member's keys applied and re-validated."""
    values = flatten_config(config)
    values.update(member.overrides)
    return build_config(values)


def run_sweep(
    config: RunConfig,
    dataset: OfflineDataset,
    out_dir: Union[str, Path],
    pretrained: Optional[TD3BCAgent] = None,
) -> Dict[str, LearningCurve]:
    """Fine-tune once per grid point and write each member's outputs.

    Every member leaves its curve, fine-tuned checkpoint and resolved
    configuration in ``out_dir``, named after its label.

    Members share the pretrained agent, except ensemble sweeps, whose
    members differ in the critics themselves and are pretrained each.
    """
    directory = Path(out_dir)
    directory.mkdir(parents=True, exist_ok=True)
    members = sweep_members(config)
    shared: Optional[bytes] = None
    if config.sweep.kind != "ensemble":
        agent = pretrained or pretrain_offline(config, dataset).agent
        shared = agent.to_bytes()
    curves: Dict[str, LearningCurve] = {}
    for member in members:
        run = member_config(config, member)
        logger.info("Sweep member %s", member.label)
        if shared is not None:
            agent = TD3BCAgent.from_bytes(shared)
            curve = LearningCurve()
        else:
            offline = pretrain_offline(run, dataset)
            agent = TD3BCAgent.from_bytes(offline.agent.to_bytes())
            curve = offline.curve
        online = finetune_online(run, agent, dataset)
        curve.extend(online.curve)
        curve.write_csv(directory / member.curve_name, wall_clock=run.record_wall_clock)
        online.agent.save(directory / member.checkpoint_name)
        write_config(run, directory / member.config_name)
        curves[member.label] = curve
    return curves
