"""Command-line interface."""
import functools
import logging
import sys
from importlib import metadata
from pathlib import Path
from typing import Any
from typing import Callable
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import click
import pandas as pd
import pendulum

from adaptive_td3bc.agent import TD3BCAgent
from adaptive_td3bc.config import TIERS
from adaptive_td3bc.config import RunConfig
from adaptive_td3bc.config import parse_overrides
from adaptive_td3bc.config import resolve_config
from adaptive_td3bc.config import write_config
from adaptive_td3bc.datasets import OfflineDataset
from adaptive_td3bc.datasets import load_dataset
from adaptive_td3bc.datasets import normalize_return
from adaptive_td3bc.datasets import save_dataset
from adaptive_td3bc.envs import make_spec
from adaptive_td3bc.exceptions import AdaptiveTD3BCError
from adaptive_td3bc.exceptions import ConfigError
from adaptive_td3bc.forge import build_dataset
from adaptive_td3bc.forge import train_reference_agents
from adaptive_td3bc.helpers import derive_seed
from adaptive_td3bc.sweeps import run_sweep
from adaptive_td3bc.training import PHASE_KEYS
from adaptive_td3bc.training import TrainingResult
from adaptive_td3bc.training import evaluate_policy
from adaptive_td3bc.training import finetune_online
from adaptive_td3bc.training import pretrain_offline
from adaptive_td3bc.training import write_outputs


logger = logging.getLogger(__name__)

PROG_NAME = "adaptive-td3bc"
PRETRAINED_CHECKPOINT = "pretrained.ckpt"
FINETUNED_CHECKPOINT = "finetuned.ckpt"
OFFLINE_CURVE = "curve_offline.csv"
ONLINE_CURVE = "curve_online.csv"
EXPERT_CURVE = "curve_expert.csv"
EVALUATION_FILE = "evaluation.csv"
RUN_COMMAND = {"ignore_unknown_options": True, "allow_extra_args": True}


def _package_version() -> str:
    try:
        return metadata.version(PROG_NAME)
    except metadata.PackageNotFoundError:
        return "unknown"


def dataset_filename(env_id: str, tier: str) -> str:
    """File name under which ``gen-data`` stores a tier."""
    return f"{env_id}_{tier}.dataset"


def translate_errors(command: Callable[..., None]) -> Callable[..., None]:
    """Map package errors onto click's usage (exit 2) and runtime (exit 1) errors."""

    @functools.wraps(command)
    def wrapper(*args: Any, **kwargs: Any) -> None:
        try:
            command(*args, **kwargs)
        except ConfigError as error:
            raise click.UsageError(str(error)) from error
        except FileNotFoundError as error:
            raise click.UsageError(str(error)) from error
        except AdaptiveTD3BCError as error:
            raise click.ClickException(f"{type(error).__name__}: {error}") from error

    return wrapper


def _load_run(
    ctx: click.Context, config_path: Optional[str], command: str
) -> RunConfig:
    config = resolve_config(config_path, parse_overrides(ctx.args))
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_config(config, out_dir / "resolved_config.txt")
    run_info = (
        f"command = {command}\n"
        f"version = {_package_version()}\n"
        f"started = {pendulum.now().to_iso8601_string()}\n"
    )
    (out_dir / "run_info.txt").write_text(run_info, encoding="utf-8")
    logger.info("Resolved %s run into %s", command, out_dir)
    return config


def _require_path(value: Optional[str], key: str) -> Path:
    if value is None:
        raise ConfigError(
            f"{key} is required; set '{key} = <path>' or --{key}=<path>", key
        )
    path = Path(value)
    if not path.is_file():
        raise FileNotFoundError(f"{key} file not found: {path}")
    return path


def _dataset(config: RunConfig) -> OfflineDataset:
    return load_dataset(_require_path(config.dataset, "dataset"))


def _reloaded(agent: TD3BCAgent) -> TD3BCAgent:
    return TD3BCAgent.from_bytes(agent.to_bytes())


def _pretrained(config: RunConfig, dataset: OfflineDataset) -> TD3BCAgent:
    if config.checkpoint is not None:
        return TD3BCAgent.load(_require_path(config.checkpoint, "checkpoint"))
    result = pretrain_offline(config, dataset)
    write_outputs(config.out_dir, result, config, PRETRAINED_CHECKPOINT, OFFLINE_CURVE)
    return _reloaded(result.agent)


def _report(result: TrainingResult, phase: str, config: RunConfig) -> None:
    rows = result.curve.eval_rows(phase)
    if rows:
        last = rows[-1]
        click.echo(
            f"{phase}: step {last['step']} eval {last['eval_mean']:.2f} "
            f"(normalized {last['eval_normalized']:.3f}); outputs in {config.out_dir}"
        )


@click.group()
@click.version_option(package_name=PROG_NAME)
@click.option("-v", "--verbose", is_flag=True, help="Log at DEBUG level.")
def main(verbose: bool) -> None:
    """Adaptive TD3+BC: offline pre-training and online fine-tuning."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


config_option = click.option(
    "-c",
    "--config",
    "config_path",
    type=str,
    default=None,
    help="key = value configuration file; --key=value flags override it.",
)


@main.command("gen-data", context_settings=RUN_COMMAND)
@config_option
@click.pass_context
@translate_errors
def gen_data(ctx: click.Context, config_path: Optional[str]) -> None:
    """Train reference agents and write offline dataset tiers."""
    config = _load_run(ctx, config_path, "gen-data")
    spec = make_spec(config.env_id)
    tiers: Tuple[str, ...] = (
        TIERS if config.forge.tier == "all" else (config.forge.tier,)
    )
    references = train_reference_agents(
        spec,
        config.agent,
        config.forge,
        config.seed,
        quiet=config.quiet,
        require_medium=any(tier.startswith("medium") for tier in tiers),
    )
    if references.curve is not None:
        references.curve.write_csv(
            Path(config.out_dir) / EXPERT_CURVE, wall_clock=config.record_wall_clock
        )
    for tier in tiers:
        dataset = build_dataset(
            references, tier, config.forge.size, config.seed, config.forge.rollout_noise
        )
        path = Path(config.out_dir) / dataset_filename(spec.env_id, tier)
        save_dataset(dataset, path)
        click.echo(
            f"{tier}: {dataset.n_transitions} transitions, "
            f"mean normalized return {dataset.normalized_returns().mean():.3f} "
            f"-> {path}"
        )


@main.command(context_settings=RUN_COMMAND)
@config_option
@click.pass_context
@translate_errors
def pretrain(ctx: click.Context, config_path: Optional[str]) -> None:
    """Offline pre-training with a fixed BC weight."""
    config = _load_run(ctx, config_path, "pretrain")
    result = pretrain_offline(config, _dataset(config))
    write_outputs(config.out_dir, result, config, PRETRAINED_CHECKPOINT, OFFLINE_CURVE)
    _report(result, "offline", config)


@main.command(context_settings=RUN_COMMAND)
@config_option
@click.pass_context
@translate_errors
def finetune(ctx: click.Context, config_path: Optional[str]) -> None:
    """Online fine-tuning; pretrains first when no checkpoint is given."""
    config = _load_run(ctx, config_path, "finetune")
    if config.checkpoint is not None:
        _require_path(config.checkpoint, "checkpoint")
    dataset = _dataset(config)
    result = finetune_online(config, _pretrained(config, dataset), dataset)
    write_outputs(config.out_dir, result, config, FINETUNED_CHECKPOINT, ONLINE_CURVE)
    _report(result, "online", config)


@main.command(context_settings=RUN_COMMAND)
@config_option
@click.pass_context
@translate_errors
def evaluate(ctx: click.Context, config_path: Optional[str]) -> None:
    """Deterministic evaluation of a checkpoint."""
    config = _load_run(ctx, config_path, "evaluate")
    agent = TD3BCAgent.load(_require_path(config.checkpoint, "checkpoint"))
    refs = _dataset(config).refs if config.dataset is not None else None
    result = evaluate_policy(
        agent.params.actor,
        agent.spec,
        config.eval_episodes,
        derive_seed(config.seed, PHASE_KEYS["evaluate"]),
    )
    frame = pd.DataFrame(
        {
            "episode": range(len(result.returns)),
            "episode_return": result.returns,
            "normalized_return": [
                normalize_return(value, refs) if refs is not None else float("nan")
                for value in result.returns
            ],
        }
    )
    frame.to_csv(
        Path(config.out_dir) / EVALUATION_FILE,
        index=False,
        float_format="%.10g",
        na_rep="",
        lineterminator="\n",
    )
    message = f"{agent.spec.env_id}: return {result.mean:.2f} +- {result.std:.2f}"
    if refs is not None:
        message += f" (normalized {normalize_return(result.mean, refs):.3f})"
    click.echo(message)


@main.command(context_settings=RUN_COMMAND)
@config_option
@click.pass_context
@translate_errors
def sweep(ctx: click.Context, config_path: Optional[str]) -> None:
    """Fine-tune over a grid and write one curve file per grid point."""
    config = _load_run(ctx, config_path, "sweep")
    dataset = _dataset(config)
    pretrained: Optional[TD3BCAgent] = None
    if config.sweep.kind != "ensemble":
        pretrained = _pretrained(config, dataset)
    curves = run_sweep(config, dataset, config.out_dir, pretrained)
    for label in curves:
        click.echo(f"wrote curve_{label}.csv, {label}.ckpt and {label}_config.txt")


def run_cli(argv: Optional[Sequence[str]] = None) -> int:
    """Run the CLI on ``argv`` and return its exit code instead of exiting."""
    args: List[str] = list(sys.argv[1:] if argv is None else argv)
    try:
        result = main.main(args=args, prog_name=PROG_NAME, standalone_mode=False)
    except click.ClickException as error:
        error.show()
        return error.exit_code
    except click.Abort:
        click.echo("Aborted!", err=True)
        return 1
    # --help and --version come back as their exit code
    return result if isinstance(result, int) else 0


if __name__ == "__main__":
    main(prog_name=PROG_NAME)  # pragma: no cover
