"""Run configuration: pydantic models, key = value files and overrides."""
from pathlib import Path
from typing import Any
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Tuple
from typing import Union

from pydantic import BaseModel
from pydantic import Field
from pydantic import ValidationError
from pydantic import root_validator
from pydantic import validator
from thefuzz import process

from adaptive_td3bc.exceptions import ConfigError


ENSEMBLE_MODES = ("redq_random_pair", "full_min", "twin")
TARGET_MODES = ("expert_reference", "rmax_times_T")
DOWNSAMPLE_MODES = ("random", "prioritized")
AVERAGING_MODES = ("ema", "window")
TIERS = ("random", "medium", "medium_replay", "medium_expert", "expert")
SWEEP_KINDS = ("alpha", "gains", "downsample", "ensemble", "target")


def _one_of(value: str, allowed: Tuple[str, ...], name: str) -> str:
    if value not in allowed:
        raise ValueError(f"{name} must be one of {allowed}, got {value!r}")
    return value


class AgentConfig(BaseModel):
    """Hyperparameters of the TD3 actor and the critic ensemble."""

    gamma: float = Field(0.99, description="discount factor")
    tau: float = Field(0.005, description="polyak coefficient for target nets")
    n_critics: int = Field(10, description="ensemble size N")
    target_subset: int = Field(2, description="critics M drawn for the target min")
    batch_size: int = Field(256, description="minibatch size B")
    expl_noise: float = Field(
        0.1, description="exploration noise std as a fraction of half the action range"
    )
    policy_noise: float = Field(
        0.2, description="target smoothing noise std as a fraction of half range"
    )
    noise_clip: float = Field(
        0.5, description="target smoothing clip as a fraction of half range"
    )
    policy_delay: int = Field(2, description="critic steps per actor step d")
    ensemble_mode: str = Field(
        "redq_random_pair", description="how the target min is taken"
    )
    per_sample_subset: bool = Field(
        False, description="draw the critic subset per transition instead of per update"
    )
    q_norm_epsilon: float = Field(1e-6, description="guard in the Q normalizer")
    q_norm_abs: bool = Field(
        True, description="normalize by mean |Q| rather than mean Q"
    )
    hidden: Tuple[int, ...] = Field((256, 256), description="hidden layer widths")
    actor_lr: float = Field(3e-4, description="actor Adam learning rate")
    critic_lr: float = Field(3e-4, description="critic Adam learning rate")
    adam_beta1: float = Field(0.9, description="Adam first-moment decay")
    adam_beta2: float = Field(0.999, description="Adam second-moment decay")
    adam_eps: float = Field(1e-8, description="Adam denominator guard")
    dtype: str = Field("float32", description="training arithmetic precision")

    @validator("ensemble_mode")
    def check_ensemble_mode(cls, value: str) -> str:  # noqa: N805
        """Ensemble mode must be known."""
        return _one_of(value, ENSEMBLE_MODES, "ensemble_mode")

    @validator("dtype")
    def check_dtype(cls, value: str) -> str:  # noqa: N805
        """Only 32- and 64-bit floats are supported."""
        return _one_of(value, ("float32", "float64"), "dtype")

    @validator("gamma")
    def check_gamma(cls, value: float) -> float:  # noqa: N805
        """Discount lies in [0, 1]."""
        if not 0.0 <= value <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        return value

    @validator("tau")
    def check_tau(cls, value: float) -> float:  # noqa: N805
        """Polyak coefficient lies in (0, 1]."""
        if not 0.0 < value <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        return value

    @validator("policy_delay", "batch_size", "n_critics")
    def check_positive(cls, value: int) -> int:  # noqa: N805
        """Counts are at least one."""
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @root_validator(skip_on_failure=True)
    def check_subset(cls, values: Dict[str, Any]) -> Dict[str, Any]:  # noqa: N805
        """M lies in [2, N]; a single critic is the only degenerate exception."""
        subset, critics = values["target_subset"], values["n_critics"]
        if critics == 1:
            if subset != 1:
                raise ValueError("target_subset must be 1 when n_critics is 1")
        elif not 2 <= subset <= critics:
            raise ValueError(f"target_subset must lie in [2, {critics}]")
        if values["ensemble_mode"] == "twin" and critics > 2:
            raise ValueError("twin mode uses exactly two critics; set n_critics = 2")
        return values


class ControllerConfig(BaseModel):
    """Settings of the adaptive behavior-cloning weight controller."""

    alpha_offline: float = Field(0.4, description="BC weight during pre-training")
    alpha_online_init: Optional[float] = Field(
        None, description="initial online BC weight; defaults to alpha_offline"
    )
    adaptive: bool = Field(True, description="adapt alpha online; false keeps it fixed")
    kp: float = Field(0.003, description="proportional gain K_P")
    kd: float = Field(0.1, description="derivative gain K_D")
    r_target: float = Field(1.05, description="normalized target return")
    target_mode: str = Field("expert_reference", description="how R_target is set")
    beta: float = Field(0.1, description="EMA coefficient of the return average")
    averaging: str = Field("ema", description="return average: ema or window")
    window: int = Field(10, description="window length when averaging = window")
    bc_scale: float = Field(
        1.0, description="common factor applied to alpha_offline, kp and kd"
    )

    @validator("target_mode")
    def check_target_mode(cls, value: str) -> str:  # noqa: N805
        """Target mode must be known."""
        return _one_of(value, TARGET_MODES, "target_mode")

    @validator("averaging")
    def check_averaging(cls, value: str) -> str:  # noqa: N805
        """Averaging mode must be known."""
        return _one_of(value, AVERAGING_MODES, "averaging")

    @validator("kp", "kd", "alpha_offline")
    def check_non_negative(cls, value: float) -> float:  # noqa: N805
        """Gains and weights are non-negative."""
        if value < 0.0:
            raise ValueError("must be non-negative")
        return value

    @validator("beta")
    def check_beta(cls, value: float) -> float:  # noqa: N805
        """EMA coefficient lies in (0, 1]."""
        if not 0.0 < value <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        return value

    @validator("window")
    def check_window(cls, value: int) -> int:  # noqa: N805
        """Window holds at least one return."""
        if value < 1:
            raise ValueError("window must be at least 1")
        return value

    @validator("bc_scale")
    def check_scale(cls, value: float) -> float:  # noqa: N805
        """Scale is positive."""
        if value <= 0.0:
            raise ValueError("bc_scale must be positive")
        return value

    @property
    def scaled_alpha_offline(self) -> float:
        """alpha_offline after applying bc_scale."""
        return self.alpha_offline * self.bc_scale


class ReplayConfig(BaseModel):
    """Replay buffer capacity and the phase-boundary downsampling."""

    capacity: int = Field(1_100_000, description="ring capacity in transitions")
    keep_fraction: float = Field(
        0.05, description="fraction of offline transitions kept for fine-tuning"
    )
    downsample_mode: str = Field("random", description="random or prioritized")

    @validator("downsample_mode")
    def check_mode(cls, value: str) -> str:  # noqa: N805
        """Downsampling mode must be known."""
        return _one_of(value, DOWNSAMPLE_MODES, "downsample_mode")

    @validator("keep_fraction")
    def check_fraction(cls, value: float) -> float:  # noqa: N805
        """Fraction lies in [0, 1]."""
        if not 0.0 <= value <= 1.0:
            raise ValueError("keep_fraction must lie in [0, 1]")
        return value

    @validator("capacity")
    def check_capacity(cls, value: int) -> int:  # noqa: N805
        """Capacity is positive."""
        if value < 1:
            raise ValueError("capacity must be at least 1")
        return value


class ForgeConfig(BaseModel):
    """Dataset generation settings."""

    tier: str = Field("all", description="dataset tier to write, or all")
    size: int = Field(20_000, description="transitions per tier")
    train_steps: int = Field(30_000, description="online TD3 steps for the expert")
    start_steps: int = Field(1_000, description="uniform-random warm-up steps")
    updates_per_step: int = Field(1, description="gradient updates per env step")
    eval_interval: int = Field(1_000, description="steps between snapshots")
    eval_episodes: int = Field(10, description="episodes per snapshot evaluation")
    reference_episodes: int = Field(
        100, description="episodes for the random and expert reference scores"
    )
    medium_low: float = Field(0.4, description="lower edge of the medium band")
    medium_high: float = Field(0.6, description="upper edge of the medium band")
    rollout_noise: float = Field(
        0.05, description="behavior noise std as a fraction of half range"
    )

    @validator("tier")
    def check_tier(cls, value: str) -> str:  # noqa: N805
        """Tier must be known."""
        return _one_of(value, TIERS + ("all",), "tier")

    @validator("size", "train_steps", "eval_interval", "eval_episodes")
    def check_positive(cls, value: int) -> int:  # noqa: N805
        """Counts are at least one."""
        if value < 1:
            raise ValueError("must be at least 1")
        return value


class SweepConfig(BaseModel):
    """Grid sweeps over fine-tuning settings."""

    kind: str = Field("alpha", description="which setting the sweep varies")
    alphas: Tuple[float, ...] = Field(
        (0.0, 0.1, 0.3), description="fixed alpha_online values"
    )
    adaptive_arm: bool = Field(
        True, description="add an adaptive-alpha member to the alpha sweep"
    )
    kps: Tuple[float, ...] = Field((0.001, 0.003, 0.01), description="K_P grid")
    kds: Tuple[float, ...] = Field((0.03, 0.1, 0.3), description="K_D grid")
    keep_fractions: Tuple[float, ...] = Field(
        (0.05, 0.25, 1.0), description="downsampling ratios"
    )
    downsample_modes: Tuple[str, ...] = Field(
        DOWNSAMPLE_MODES, description="downsampling methods"
    )
    ensemble_modes: Tuple[str, ...] = Field(
        ENSEMBLE_MODES, description="ensemble usage modes"
    )
    target_modes: Tuple[str, ...] = Field(TARGET_MODES, description="target modes")

    @validator("kind")
    def check_kind(cls, value: str) -> str:  # noqa: N805
        """Sweep kind must be known."""
        return _one_of(value, SWEEP_KINDS, "kind")


class RunConfig(BaseModel):
    """Everything a gen-data, pretrain, finetune, evaluate or sweep run reads."""

    env_id: str = Field("pendulum", description="environment identifier")
    dataset: Optional[str] = Field(None, description="offline dataset path")
    checkpoint: Optional[str] = Field(None, description="agent checkpoint to load")
    out_dir: str = Field("runs", description="directory receiving every output")
    seed: int = Field(0, description="master seed")
    offline_steps: int = Field(50_000, description="offline gradient steps K")
    online_steps: int = Field(20_000, description="online environment steps")
    updates_per_step: int = Field(5, description="critic updates per env step G")
    eval_interval: int = Field(5_000, description="steps between evaluations")
    eval_episodes: int = Field(10, description="episodes per evaluation")
    quiet: bool = Field(False, description="hide progress bars")
    record_wall_clock: bool = Field(
        False, description="add wall-clock seconds to the curve CSV"
    )
    agent: AgentConfig = Field(default_factory=AgentConfig)
    controller: ControllerConfig = Field(default_factory=ControllerConfig)
    replay: ReplayConfig = Field(default_factory=ReplayConfig)
    forge: ForgeConfig = Field(default_factory=ForgeConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)

    @validator("offline_steps", "updates_per_step")
    def check_non_negative(cls, value: int) -> int:  # noqa: N805
        """Counts are non-negative."""
        if value < 0:
            raise ValueError("must be non-negative")
        return value

    @validator("online_steps", "eval_interval", "eval_episodes")
    def check_positive(cls, value: int) -> int:  # noqa: N805
        """Counts are at least one."""
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @root_validator(skip_on_failure=True)
    def check_eval_interval(  # noqa: N805
        cls, values: Dict[str, Any]
    ) -> Dict[str, Any]:
        """Evaluation happens at least once during fine-tuning."""
        if values["eval_interval"] > values["online_steps"]:
            raise ValueError("eval_interval must not exceed online_steps")
        return values


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_format_value(item) for item in value)
    return str(value)


def flatten_config(config: BaseModel, prefix: str = "") -> Dict[str, str]:
    """Flatten nested models into dotted ``key -> text value`` pairs."""
    flat: Dict[str, str] = {}
    for name in config.__fields__:
        value = getattr(config, name)
        key = f"{prefix}{name}"
        if isinstance(value, BaseModel):
            flat.update(flatten_config(value, f"{key}."))
        else:
            flat[key] = _format_value(value)
    return flat


def _default_for(key: str) -> Any:
    node: Any = RunConfig()
    for part in key.split("."):
        node = getattr(node, part)
    return node


def _known_keys() -> List[str]:
    return sorted(flatten_config(RunConfig()))


def _optional_keys() -> List[str]:
    optional: List[str] = []

    def walk(model: type, prefix: str) -> None:
        for name, model_field in model.__fields__.items():  # type: ignore[attr-defined]
            if isinstance(model_field.type_, type) and issubclass(
                model_field.type_, BaseModel
            ):
                walk(model_field.type_, f"{prefix}{name}.")
            elif model_field.allow_none:
                optional.append(f"{prefix}{name}")

    walk(RunConfig, "")
    return optional


def _unknown_key_error(key: str, known: Iterable[str]) -> ConfigError:
    match = process.extractOne(key, list(known))
    hint = f" (did you mean {match[0]!r}?)" if match and match[1] >= 80 else ""
    return ConfigError(f"Unknown configuration key {key!r}{hint}", key=key)


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def load_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Read a configuration file."""
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"Configuration file not found: {config_path}", key="config")
    return parse_config_text(config_path.read_text(encoding="utf-8"), str(config_path))


def parse_overrides(args: Iterable[str]) -> Dict[str, str]:
    """Turn ``--key=value`` flags into a mapping; dashes in keys become underscores."""
    values: Dict[str, str] = {}
    for arg in args:
        if not arg.startswith("--") or "=" not in arg:
            raise ConfigError(f"Overrides must look like --key=value, got {arg!r}")
        key, _, value = arg[2:].partition("=")
        values[key.replace("-", "_")] = value
    return values


def build_config(values: Dict[str, str]) -> RunConfig:
    """Validate dotted ``key -> text`` pairs against :class:`RunConfig`."""
    known = _known_keys()
    optional = set(_optional_keys())
    nested: Dict[str, Any] = {}
    for key, text in values.items():
        if key not in known:
            raise _unknown_key_error(key, known)
        default = _default_for(key)
        parsed: Any = text
        if key in optional and text.strip().lower() in ("", "none"):
            parsed = None
        elif isinstance(default, (list, tuple)):
            parsed = [item.strip() for item in text.split(",") if item.strip()]
        node = nested
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = parsed
    try:
        return RunConfig.parse_obj(nested)
    except ValidationError as error:
        first = error.errors()[0]
        location = ".".join(str(part) for part in first["loc"] if part != "__root__")
        raise ConfigError(
            f"Invalid value for {location or 'configuration'}: {first['msg']}",
            key=location or None,
        ) from error


def resolve_config(
    config_path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, str]] = None,
) -> RunConfig:
    """Defaults, then the config file, then the overrides."""
    values: Dict[str, str] = {}
    if config_path is not None:
        values.update(load_config_file(config_path))
    values.update(overrides or {})
    return build_config(values)


def render_config(config: RunConfig) -> str:
    """Render a resolved config in the file grammar with sorted keys."""
    flat = flatten_config(config)
    return "".join(f"{key} = {flat[key]}\n" for key in sorted(flat))


def write_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Write the resolved configuration next to the run outputs."""
    Path(path).write_text(render_config(config), encoding="utf-8")
