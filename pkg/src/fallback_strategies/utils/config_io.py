"""
TOML configuration files: [environment], [learner], [shaping], [run]
"""

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, Union

import tomli_w

from ..models.schemas import EnvConfig, TrainConfig

PathLike = Union[str, Path]


def _read_toml(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ValueError(f"config file {path} is not valid TOML: {e}") from e


def load_train_config(path: PathLike) -> TrainConfig:
    return TrainConfig.model_validate(_read_toml(path))


def load_env_config(path: PathLike) -> EnvConfig:
    """The [environment] table of a config file (a full TrainConfig file works too)"""
    return EnvConfig.model_validate(_read_toml(path).get("environment", {}))


def dumps_env_config(cfg: EnvConfig) -> str:
    return tomli_w.dumps({"environment": cfg.model_dump(mode="json")})


def loads_env_config(text: str) -> EnvConfig:
    return EnvConfig.model_validate(tomllib.loads(text).get("environment", {}))


def save_train_config(cfg: TrainConfig, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        tomli_w.dump(cfg.model_dump(mode="json", exclude_none=True), fh)
    return path
