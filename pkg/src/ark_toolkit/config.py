"""
Configuration module for ark_toolkit.

Uses Pydantic models for validation and parsing of run configuration files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .nvector import ExecPolicy, PolicyKind

logger = logging.getLogger(__name__)


class ExecPolicyConfig(BaseModel):
    """Execution policy of the parallel vector backends."""
    kind: Literal["thread-direct", "grid-stride"] = "thread-direct"
    workers: Optional[int] = Field(None, ge=1)
    block_size: int = Field(256, alias="blockSize", ge=1)

    model_config = ConfigDict(populate_by_name=True)

    def to_policy(self, default_workers: int = 1) -> ExecPolicy:
        """Streaming policy for this configuration."""
        return ExecPolicy(PolicyKind(self.kind), workers=self.workers or default_workers)

    def reduction_policy(self, default_workers: int = 1) -> ExecPolicy:
        return ExecPolicy.block_reduce(self.block_size, workers=self.workers or default_workers)


class Tolerances(BaseModel):
    """Relative and absolute tolerances of the error test."""
    rtol: float = 1e-6
    atol: Union[float, List[float]] = 1e-9

    @field_validator("rtol")
    @classmethod
    def _rtol_positive(cls, value: float) -> float:
        if value <= 0.0:
            raise ValueError(f"rtol must be positive, got {value}")
        return value

    @field_validator("atol")
    @classmethod
    def _atol_non_negative(cls, value):
        values = value if isinstance(value, list) else [value]
        if any(v < 0.0 for v in values):
            raise ValueError("atol entries must be non-negative")
        return value


class IntegratorOptions(BaseModel):
    """Step controller and stage solver settings."""
    tableau: str = "ark324"
    safety: float = Field(0.9, gt=0.0, le=1.0)
    eta_min: float = Field(0.1, alias="etaMin", gt=0.0)
    eta_max: float = Field(10.0, alias="etaMax", ge=1.0)
    eta_min_fail: float = Field(0.1, alias="etaMinFail", gt=0.0)
    eta_conv_fail: float = Field(0.25, alias="etaConvFail", gt=0.0, lt=1.0)
    max_error_test_failures: int = Field(7, alias="maxErrorTestFailures", ge=1)
    max_conv_failures: int = Field(10, alias="maxConvFailures", ge=1)
    h_min: float = Field(0.0, alias="hMin", ge=0.0)
    h_max: float = Field(0.0, alias="hMax", ge=0.0)  # 0 means unbounded
    fixed_step: Optional[float] = Field(None, alias="fixedStep", gt=0.0)
    controller: Literal["i", "pi"] = "i"
    pi_k1: float = Field(0.8, alias="piK1")
    pi_k2: float = Field(0.31, alias="piK2")
    tol_coef: float = Field(0.1, alias="tolCoef", gt=0.0)
    max_nonlinear_iters: int = Field(3, alias="maxNonlinearIters", ge=1)
    linear_tol_factor: float = Field(0.05, alias="linearTolFactor", gt=0.0)
    maxl: int = Field(5, ge=1)
    max_restarts: int = Field(0, alias="maxRestarts", ge=0)
    anderson_depth: int = Field(0, alias="andersonDepth", ge=0, le=5)
    max_steps: int = Field(500000, alias="maxSteps", ge=1)

    model_config = ConfigDict(populate_by_name=True)


class ProblemConfig(BaseModel):
    """Advection-reaction problem and run layout."""
    nx: int = Field(256, ge=1)
    ranks: int = Field(1, ge=1)
    domain: float = 1.0
    advection_speed: float = Field(0.01, alias="advectionSpeed")
    reactant_a: float = Field(1.0, alias="A")
    reactant_b: float = Field(3.5, alias="B")
    epsilon: float = Field(5e-6, gt=0.0)
    alpha: float = 0.1
    mu: Optional[float] = None
    sigma: Optional[float] = None
    tf: float = Field(1.0, gt=0.0)
    tolerances: Tolerances = Field(default_factory=Tolerances)
    solver: Literal["task-local", "global"] = "task-local"
    backend: Literal["serial", "pooled", "devsim"] = "serial"
    unified: bool = False
    workers: Optional[int] = Field(None, ge=1)
    policy: ExecPolicyConfig = Field(default_factory=ExecPolicyConfig)
    batch: int = Field(1, ge=1)  # cells per group in batch mode
    instances: int = Field(1, ge=1)
    advection: bool = True
    reactions: bool = True

    model_config = ConfigDict(populate_by_name=True)

    @model_validator(mode="after")
    def _check_layout(self) -> "ProblemConfig":
        if self.domain <= 0.0:
            raise ValueError(f"domain length must be positive, got {self.domain}")
        if self.advection_speed <= 0.0:
            raise ValueError(
                f"advection speed must be positive for the upwind stencil, got {self.advection_speed}"
            )
        if self.nx % self.ranks != 0:
            raise ValueError(f"nx={self.nx} is not divisible by ranks={self.ranks}")
        if self.sigma is not None and self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        return self

    @property
    def local_nx(self) -> int:
        return self.nx // self.ranks

    @property
    def dx(self) -> float:
        return self.domain / self.nx

    @property
    def center(self) -> float:
        return self.domain / 2.0 if self.mu is None else self.mu

    @property
    def width(self) -> float:
        return self.domain / 4.0 if self.sigma is None else self.sigma


class BenchConfig(BaseModel):
    """Vector benchmark protocol."""
    lengths: List[int] = Field(default_factory=lambda: [1000, 10000, 100000, 1000000])
    repetitions: int = Field(50, ge=1)
    backends: List[Literal["serial", "pooled", "devsim"]] = Field(
        default_factory=lambda: ["serial", "pooled", "devsim"]
    )
    ops: List[str] = Field(
        default_factory=lambda: ["linear_sum", "prod", "scale", "dot", "max_norm", "wrms_norm", "constr_mask"]
    )
    workers: Optional[int] = Field(None, ge=1)
    seed: int = 0


class RunConfig(BaseModel):
    """Main configuration class."""
    problem: ProblemConfig = Field(default_factory=ProblemConfig)
    integrator: IntegratorOptions = Field(default_factory=IntegratorOptions)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    output_format: Literal["csv", "json"] = Field("csv", alias="outputFormat")

    model_config = ConfigDict(populate_by_name=True)


def validate_config(data: Dict[str, Any]) -> RunConfig:
    """
    Validate raw configuration data.

    Raises:
        ConfigError: With the validation messages
    """
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e


def apply_overrides(config: RunConfig, problem: Optional[Dict[str, Any]] = None,
                    integrator: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Return a copy of ``config`` with the given fields replaced and re-validated.

    Args:
        config: Base configuration
        problem: ProblemConfig field overrides (None values are ignored); ``rtol``,
            ``atol`` and ``policy`` (a policy kind) address the nested models
        integrator: IntegratorOptions field overrides (None values are ignored)
    """
    data = config.model_dump()
    for section, overrides in (("problem", problem), ("integrator", integrator)):
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key in ("rtol", "atol") and section == "problem":
                data["problem"]["tolerances"][key] = value
            elif key == "policy" and section == "problem":
                data["problem"]["policy"]["kind"] = value
            else:
                data[section][key] = value
    return validate_config(data)


def load_config(config_path: Union[str, Path]) -> RunConfig:
    """
    Load and validate configuration from a JSON file.

    Args:
        config_path: Path to configuration file

    Returns:
        Validated configuration object
    """
    config_path = Path(config_path)

    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    logger.info(f"Loading configuration from: {config_path}")

    with open(config_path, 'r', encoding='utf-8') as f:
        data = json.load(f)

    config = validate_config(data)
    problem = config.problem
    logger.info(
        f"Loaded configuration: nx={problem.nx}, ranks={problem.ranks}, "
        f"solver={problem.solver}, backend={problem.backend}"
    )
    return config
