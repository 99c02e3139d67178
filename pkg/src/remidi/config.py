"""Experiment configuration schema and loading."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

EXPERIMENTS = (
    "exact-blp",
    "paired-tabular",
    "remidi-tabular",
    "plr",
    "remidi",
    "decision-rules",
    "fixtures",
)


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class EnvConfig(_Strict):
    family: Literal["tabular", "lever", "grid", "lottery", "random"] = "tabular"
    params: dict[str, Any] = Field(default_factory=dict)


class AgentConfig(_Strict):
    """Learner hyperparameters; defaults are the one-step tabular settings."""

    policy_lr: float = Field(0.01, ge=0)
    value_lr: float = Field(1.0, ge=0)
    entropy_coeff: float = Field(0.1, ge=0)
    discount: float = Field(0.95, gt=0, le=1)
    updates_per_side: int = Field(5, ge=1)
    keys: Literal["history", "observation"] = "history"


class PLRConfig(_Strict):
    replay_rate: float = Field(0.8, gt=0, le=1)
    capacity: int = Field(64, ge=0)
    prioritization: Literal["rank", "topk"] = "rank"
    temperature: float = Field(1.0, gt=0)
    k: int = Field(32, ge=1)
    staleness_coeff: float = Field(0.3, ge=0, le=1)
    robust: bool = True


class RemidiConfig(_Strict):
    buffer_count: int = Field(2, ge=1)
    inner_buffer_size: int = Field(32, ge=0)
    iterations_per_buffer: int = Field(1000, ge=1)


class TrainConfig(_Strict):
    """Loop lengths and curation settings shared by the learning experiments."""

    iterations: int = Field(2000, ge=1)
    adversary_count: int = Field(3, ge=1)
    batch_size: int = Field(1, ge=1)
    rollouts_per_level: int = Field(1, ge=1)
    score: Literal["perfect", "pvl", "maxmc", "neg_return"] = "perfect"
    exact_score: Union[bool, Literal["auto"]] = True
    eval_episodes: Optional[int] = Field(None, ge=1)


class SolverConfig(_Strict):
    tolerance: float = Field(1e-6, gt=0)
    method: Literal["auto", "normal", "sequence"] = "auto"
    node_budget: int = Field(10**6, ge=1)
    max_steps: int = Field(64, ge=1)
    suite: Literal["fixtures", "theorems", "all"] = "all"
    random_instances: int = Field(50, ge=0)


class LoggingConfig(_Strict):
    interval: int = Field(1, ge=1)
    eval_every: int = Field(0, ge=0)


class ExperimentConfig(_Strict):
    experiment: Literal[EXPERIMENTS]  # type: ignore[valid-type]
    env: EnvConfig = Field(default_factory=EnvConfig)
    agent: AgentConfig = Field(default_factory=AgentConfig)
    plr: PLRConfig = Field(default_factory=PLRConfig)
    remidi: RemidiConfig = Field(default_factory=RemidiConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    solver: SolverConfig = Field(default_factory=SolverConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    @field_validator("env")
    @classmethod
    def _env_params_json(cls, v: EnvConfig) -> EnvConfig:
        json.dumps(v.params)
        return v

    @model_validator(mode="after")
    def _family_fits(self) -> "ExperimentConfig":
        one_step = {"paired-tabular", "remidi-tabular"}
        if self.experiment in one_step and self.env.family not in ("tabular", "lever", "random"):
            raise ValueError(f"experiment {self.experiment!r} needs a one-step family, got {self.env.family!r}")
        if self.experiment in ("plr", "remidi") and self.env.family not in ("lever", "grid", "tabular"):
            raise ValueError(f"experiment {self.experiment!r} needs a generated-level family, got {self.env.family!r}")
        return self

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()


def _format_errors(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data: Any) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON ({err.msg} at line {err.lineno})") from None
    return parse_config(data)
