"""Run configuration, training schedules, and the flat config file format.

Config files are flat ``key = value`` text with an explicit
``config_version`` line, so experiment provenance stays diff-able.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

CONFIG_VERSION = 1

VARIANT_NAMES = (
    "DMC_OT",
    "DMC",
    "SIMULTANEOUS",
    "NO_TASK_PROMPT",
    "ALT_OT",
    "NO_OT",
)


@dataclass(frozen=True)
class Schedule:
    """First-order optimizer schedule for one training stage."""

    steps: int
    lr: float
    tau: float = 0.01
    lambda_ortho: float = 0.0
    optimizer: str = "sgd"
    batch_size: int = 0  # 0 means full batch

    def __post_init__(self) -> None:
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.batch_size < 0:
            raise ValueError("batch_size must be nonnegative")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.lambda_ortho < 0.0:
            raise ValueError("lambda_ortho must be nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class StreamSpec:
    """Synthetic task-stream layout and generator knobs."""

    num_tasks: int = 10
    classes_per_task: int = 5
    input_dim: int = 32
    feature_dim: int = 16
    class_separation: float = 1.0
    within_class_scale: float = 1.0
    train_per_class: int = 100
    eval_per_class: int = 100
    diagnostic: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_tasks < 1 or self.classes_per_task < 1:
            raise ValueError("stream must have at least one task and class")
        if self.input_dim < 1 or self.feature_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.class_separation <= 0.0 or self.within_class_scale <= 0.0:
            raise ValueError("scales must be positive")
        if self.train_per_class < 1 or self.eval_per_class < 1:
            raise ValueError("samples per class must be positive")


@dataclass(frozen=True)
class RunConfig:
    """Everything a reproducible experiment run needs besides the stream."""

    prompt_len: int = 10
    beta: float = 0.1
    lambda_ortho: float = 0.1
    tau: float = 0.01
    stage1_steps: int = 30
    stage1_lr: float = 0.002
    stage1_batch: int = 128
    stage2_steps: int = 100
    stage2_lr: float = 0.2
    replay_per_class: int = 64
    optimizer: str = "sgd"
    variant: str = "DMC_OT"
    seeds: tuple = (0,)

    def __post_init__(self) -> None:
        if self.prompt_len < 1:
            raise ValueError("prompt_len must be positive")
        if self.beta < 0.0:
            raise ValueError("beta must be nonnegative")
        if self.lambda_ortho < 0.0:
            raise ValueError("lambda_ortho must be nonnegative")
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        if self.replay_per_class < 0:
            raise ValueError("replay_per_class must be nonnegative")
        if self.variant not in VARIANT_NAMES:
            raise ValueError(f"unknown variant {self.variant!r}")
        if not self.seeds:
            raise ValueError("at least one seed required")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def stage1_schedule(self) -> Schedule:
        return Schedule(
            steps=self.stage1_steps,
            lr=self.stage1_lr,
            tau=self.tau,
            optimizer=self.optimizer,
            batch_size=self.stage1_batch,
        )

    def stage2_schedule(self) -> Schedule:
        return Schedule(
            steps=self.stage2_steps,
            lr=self.stage2_lr,
            tau=self.tau,
            lambda_ortho=self.lambda_ortho,
            optimizer=self.optimizer,
        )


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def emit_config(config: RunConfig, stream: StreamSpec) -> str:
    """Render a config + stream spec as flat key = value text."""
    lines = [f"config_version = {CONFIG_VERSION}"]
    for f in dataclasses.fields(RunConfig):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    for f in dataclasses.fields(StreamSpec):
        lines.append(f"stream.{f.name} = {_format_value(getattr(stream, f.name))}")
    return "\n".join(lines) + "\n"


def _coerce(raw: str, target_type):
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"invalid boolean {raw!r}")
    if target_type is tuple:
        return tuple(int(v) for v in raw.split(",") if v.strip())
    return raw


def parse_config(text: str) -> "tuple[RunConfig, StreamSpec]":
    """Parse config text emitted by :func:`emit_config`."""
    run_fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    stream_fields = {f.name: f for f in dataclasses.fields(StreamSpec)}
    run_kwargs: dict = {}
    stream_kwargs: dict = {}
    version = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "config_version":
            version = int(raw)
        elif key.startswith("stream."):
            name = key[len("stream.") :]
            if name not in stream_fields:
                raise ValueError(f"line {lineno}: unknown stream key {name!r}")
            stream_kwargs[name] = _coerce(raw, _field_type(stream_fields[name]))
        elif key in run_fields:
            run_kwargs[key] = _coerce(raw, _field_type(run_fields[key]))
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    if version is None:
        raise ValueError("missing config_version")
    if version != CONFIG_VERSION:
        raise ValueError(f"unsupported config_version {version}")
    return RunConfig(**run_kwargs), StreamSpec(**stream_kwargs)


_TYPE_NAMES = {"int": int, "float": float, "bool": bool, "str": str, "tuple": tuple}


def _field_type(f: dataclasses.Field):
    # Dataclass field types are stored as strings under `from __future__ import
    # annotations`; resolve the handful we use.
    t = f.type
    if isinstance(t, type):
        return t
    return _TYPE_NAMES[str(t)]
