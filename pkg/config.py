import hashlib
import json
import math
import os
from enum import Enum
from pathlib import Path
from typing import Any

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

load_dotenv()


class Config:
    # Environment
    ENVIRONMENT = os.getenv("PUSHING_ENV", "dev")  # dev or prod

    # Logging
    LOG_LEVEL = os.getenv("PUSHING_LOG_LEVEL", "INFO").upper()

    # Outputs
    OUT_DIR = os.getenv("PUSHING_OUT_DIR", "runs")

    # Evaluation fan-out (1 = run episodes in-process)
    WORKERS = int(os.getenv("PUSHING_WORKERS", 1))

    @classmethod
    def validate(cls):
        """Validate process-level configuration"""
        if cls.ENVIRONMENT not in ("dev", "prod"):
            raise ValueError(f"PUSHING_ENV must be 'dev' or 'prod', got {cls.ENVIRONMENT!r}")

        if cls.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"PUSHING_LOG_LEVEL must be a logging level name, got {cls.LOG_LEVEL!r}")

        if cls.WORKERS < 1:
            raise ValueError("PUSHING_WORKERS must be at least 1")


config = Config()


class ShapeName(str, Enum):
    T = "T"
    L = "L"
    TRIANGLE = "triangle"
    TRAPEZOID = "trapezoid"


class _Frozen(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class MotionModel(_Frozen):
    """Quasi-static pushing parameters (controller table defaults)."""

    h: float = Field(0.05, gt=0)  # meters
    mu_c: float = Field(0.6, gt=0)


class NoiseModel(_Frozen):
    """Additive object-frame process noise applied after the motion model."""

    sigma_pos: float = Field(0.0, ge=0)
    sigma_rot: float = Field(0.0, ge=0)
    seed: int = 0

    @property
    def is_zero(self) -> bool:
        return self.sigma_pos == 0.0 and self.sigma_rot == 0.0


class MpcConfig(_Frozen):
    N: int = Field(10, ge=1)
    q_weights: tuple[float, float, float] = (100.0, 100.0, 10.0)
    r_weights: tuple[float, float] = (1.0, 1.0)
    u_max: tuple[float, float] = (0.01, 0.01)
    solver_tol: float = Field(1e-9, gt=0)
    max_solver_iters: int = Field(300, ge=1)
    mcr_penalty: float = Field(1e4, gt=0)
    round_step_cap: int = Field(40, ge=1)
    stall_window: int = Field(5, ge=1)
    stall_eps: float = Field(1e-8, ge=0)
    boundary_tol: float = Field(1e-4, ge=0)

    @field_validator("q_weights", "r_weights", "u_max")
    @classmethod
    def _positive(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(not (v > 0 and math.isfinite(v)) for v in value):
            raise ValueError(f"all components must be positive and finite, got {value}")
        return value


class EpisodeConfig(_Frozen):
    shape: ShapeName = ShapeName.T
    goal: tuple[float, float, float] = (0.0, 0.0, 0.0)
    workspace_half_width: float = Field(0.25, gt=0)
    workspace_half_height: float = Field(0.25, gt=0)
    r_min: float = Field(0.03, gt=0)
    k: float = Field(1.0 / 3.0, gt=0, lt=1)
    max_rounds: int = Field(70, ge=1)
    pos_tol: float = Field(0.015, gt=0)
    ang_tol: float = Field(0.0436, gt=0)
    alpha: float = 0.9
    angle_weight: float = Field(0.3, gt=0)  # m/rad inside mixed norms
    init_margin: float = Field(0.05, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _margin_fits(self) -> "EpisodeConfig":
        if self.init_margin >= min(self.workspace_half_width, self.workspace_half_height):
            raise ValueError("init_margin leaves no room to sample start poses")
        return self


class TrainConfig(_Frozen):
    lr: float = Field(1e-4, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    weight_decay: float = Field(1e-5, ge=0)
    gamma: float = Field(0.9, gt=0, lt=1)
    eps_start: float = Field(0.5, ge=0, le=1)
    eps_end: float = Field(0.1, ge=0, le=1)
    eps_decay_episodes: int = Field(150, ge=1)
    batch_size: int = Field(64, ge=1)
    buffer_capacity: int = Field(20_000, ge=1)
    target_sync_every: int = Field(200, ge=1)
    updates_per_round: int = Field(1, ge=1)
    episodes: int = Field(200, ge=0)
    seed: int = 0

    @model_validator(mode="after")
    def _eps_order(self) -> "TrainConfig":
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must not exceed eps_start")
        return self


class RunConfig(_Frozen):
    """Merged view of every experiment setting; all fields have defaults."""

    episode: EpisodeConfig = EpisodeConfig()
    mpc: MpcConfig = MpcConfig()
    train: TrainConfig = TrainConfig()
    model: MotionModel = MotionModel()
    noise: NoiseModel = NoiseModel()
    out_dir: str = Config.OUT_DIR
    seed: int = 0


def flatten(data: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    """Flatten a nested mapping into dotted keys."""
    flat: dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten(flat: dict[str, Any]) -> dict[str, Any]:
    nested: dict[str, Any] = {}
    for dotted, value in flat.items():
        node = nested
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"config key {dotted!r} conflicts with a scalar parent")
        node[leaf] = value
    return nested


def parse_override(item: str) -> tuple[str, Any]:
    """Parse a ``key=value`` override; the value is read as YAML (numbers, lists, strings)."""
    if "=" not in item:
        raise ValueError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    return key.strip(), yaml.safe_load(raw)


def load_run_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """
    Resolve a RunConfig from defaults, an optional YAML file and flag overrides.

    Args:
        path: YAML file with flat dotted keys (``mpc.N: 10``); nested mappings are also accepted
        overrides: dotted-key values applied last

    Returns:
        The validated RunConfig

    Raises:
        ValueError: unknown keys or values violating a model invariant
        OSError: unreadable config file
    """
    layered = flatten(RunConfig().model_dump(mode="json"))
    known = set(layered)

    if path is not None:
        with open(path) as f:
            file_values = yaml.safe_load(f) or {}
        if not isinstance(file_values, dict):
            raise ValueError(f"config file {path} must contain a mapping")
        file_flat = flatten(file_values)
        unknown = sorted(set(file_flat) - known)
        if unknown:
            raise ValueError(f"unknown config keys in {path}: {', '.join(unknown)}")
        layered.update(file_flat)

    if overrides:
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        layered.update(overrides)

    return RunConfig.model_validate(unflatten(layered))


def dump_run_config(cfg: RunConfig) -> str:
    """Flat dotted-key YAML snapshot of a resolved config, stable key order."""
    return yaml.safe_dump(flatten(cfg.model_dump(mode="json")), sort_keys=False, default_flow_style=None)


def config_fingerprint(cfg: RunConfig) -> str:
    """SHA-256 over the canonical config with every seed removed."""
    flat = {k: v for k, v in flatten(cfg.model_dump(mode="json")).items() if not k.split(".")[-1] == "seed"}
    flat.pop("out_dir", None)
    canonical = json.dumps(flat, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()
