"""Configuration loading for pava.

Handles environment variable and .env file precedence, plus the YAML run config file
whose sections are the pydantic models of the owning modules.
"""

import os
from pathlib import Path
from typing import Any

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from pava.constants import EnvDefaults, Logging
from pava.ensemble import EnsembleSettings
from pava.errors import ConfigError
from pava.model import ModelSettings
from pava.preprocess import GammaParams, PreprocessConfig, SampleSpec
from pava.privacy import BlurParams, RedactConfig, SensitiveClassSet
from pava.training import TrainConfig


def load_config() -> dict[str, str | int | None]:
    """Load configuration from $HOME/.pava.env, then ./.pava.env or ./.env, then environment variables."""
    user_config = Path.home() / ".pava.env"
    if user_config.exists():
        load_dotenv(user_config)

    project_pava_env = Path(".pava.env")
    project_env = Path(".env")

    if project_pava_env.exists():
        load_dotenv(project_pava_env, override=True)
    elif project_env.exists():
        load_dotenv(project_env, override=True)

    return {
        "log_level": os.getenv("PAVA_LOG_LEVEL", Logging.DEFAULT_LEVEL),
        "workers": int(os.getenv("PAVA_WORKERS", EnvDefaults.WORKERS)),
        "device": os.getenv("PAVA_DEVICE", EnvDefaults.DEVICE),
        "seed": int(os.getenv("PAVA_SEED", EnvDefaults.SEED)),
        "maskrcnn_weights": os.getenv("PAVA_MASKRCNN_WEIGHTS"),
    }


class RunConfig(BaseModel):
    """Everything a command needs besides its input and output paths."""

    model_config = ConfigDict(extra="forbid")

    seed: int = EnvDefaults.SEED
    workers: int = Field(default=EnvDefaults.WORKERS, ge=1)
    device: str = EnvDefaults.DEVICE
    maskrcnn_weights: str | None = None
    gamma: GammaParams = Field(default_factory=GammaParams)
    sample: SampleSpec = Field(default_factory=SampleSpec)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    blur: BlurParams = Field(default_factory=BlurParams)
    sensitive: SensitiveClassSet = Field(default_factory=SensitiveClassSet)
    redact: RedactConfig = Field(default_factory=RedactConfig)
    model: ModelSettings = Field(default_factory=ModelSettings)
    train: TrainConfig = Field(default_factory=TrainConfig)
    ensemble: EnsembleSettings = Field(default_factory=EnsembleSettings)


def _merge(base: dict[str, Any], update: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in update.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_run_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> RunConfig:
    """Resolve the effective run configuration.

    Precedence, lowest first: built-in defaults, environment layer, run config file, overrides.

    Args:
        path: Optional YAML run config file
        overrides: Nested mapping of flag values; None entries are ignored

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: If the file cannot be read or a value is invalid
    """
    env = load_config()
    data: dict[str, Any] = {
        "seed": env["seed"],
        "workers": env["workers"],
        "device": env["device"],
        "maskrcnn_weights": env["maskrcnn_weights"],
    }

    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                file_data = yaml.safe_load(f) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"Cannot read run config {path}: {e}") from e
        if not isinstance(file_data, dict):
            raise ConfigError(f"Run config {path} must be a mapping at top level")
        data = _merge(data, file_data)

    if overrides:
        data = _merge(data, _drop_none(overrides))

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("Invalid run configuration", details=str(e)) from e


def _drop_none(mapping: dict[str, Any]) -> dict[str, Any]:
    cleaned: dict[str, Any] = {}
    for key, value in mapping.items():
        if isinstance(value, dict):
            nested = _drop_none(value)
            if nested:
                cleaned[key] = nested
        elif value is not None:
            cleaned[key] = value
    return cleaned


def dump_run_config(config: RunConfig) -> str:
    """Render a RunConfig as YAML."""
    return yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False)
