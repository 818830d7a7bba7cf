"""Loading YAML configs and hashing config payloads."""

import hashlib
from dataclasses import asdict, is_dataclass
from pathlib import Path
from typing import Any

import yaml

from msct.errors import ConfigError
from msct.utils.json_utils import dumps


def load_yaml(config_path: str | Path) -> dict:
    """Load a YAML mapping; an empty file loads as ``{}``."""
    config_path = Path(config_path)
    try:
        with open(config_path, "r", encoding="utf-8") as f:
            config = yaml.safe_load(f) or {}
    except OSError as err:
        raise ConfigError("config", f"cannot read {config_path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError("config", f"{config_path} is not valid YAML: {err}") from err
    if not isinstance(config, dict):
        raise ConfigError("config", f"{config_path} must contain a mapping")
    return config


def dump_yaml(config_path: str | Path, payload: dict) -> None:
    config_path = Path(config_path)
    config_path.parent.mkdir(parents=True, exist_ok=True)
    with open(config_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(payload, f, sort_keys=True)


def list_configs(config_dir: str | Path) -> list[Path]:
    return sorted(Path(config_dir).glob("*.yaml"))


def config_hash(config: Any) -> str:
    """SHA-256 of the canonical JSON form of a config (dataclass or mapping)."""
    payload = asdict(config) if is_dataclass(config) else config
    return hashlib.sha256(dumps(payload).encode("utf-8")).hexdigest()
