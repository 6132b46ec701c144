# Prosperity Public License 3.0
import hashlib
import os
from enum import Enum
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

from pydantic import ValidationError

from coreason_rlv.errors import ConfigError
from coreason_rlv.schemas import RunConfig
from coreason_rlv.utils.logger import logger

ENV_PREFIX = "COREASON_RLV_"

# Dotted config key -> RunConfig field, in echo order.
KEY_MAP: Dict[str, str] = {
    "rl.method": "method",
    "run.seed": "seed",
    "run.total_iterations": "total_iterations",
    "run.batch": "batch",
    "task.difficulty": "difficulty",
    "task.domain": "domain",
    "task.modulus": "modulus",
    "policy.window": "window",
    "rollout.max_len": "max_len",
    "rollout.temperature": "temperature",
    "rollout.workers": "workers",
    "rl.group_size": "group_size",
    "rl.mc_samples": "mc_samples",
    "rl.ppo_epochs": "ppo_epochs",
    "rl.beta": "beta",
    "rl.eps_clip": "eps_clip",
    "rl.gamma": "gamma",
    "rl.lambda_gae": "lambda_gae",
    "verify.lambda_max": "lambda_max",
    "verify.mode": "verifier_mode",
    "optim.lr_max": "lr_max",
    "optim.head_lr": "head_lr",
    "optim.ramp_fraction": "ramp_fraction",
    "probe.tasks": "probe_tasks",
    "probe.samples": "probe_samples",
}
FIELD_TO_KEY: Dict[str, str] = {field: key for key, field in KEY_MAP.items()}

# A raw value together with where it came from: (value, source, line).
RawValue = Tuple[str, str, Optional[int]]


def env_var_name(key: str) -> str:
    """`rl.method` -> `COREASON_RLV_RL_METHOD`."""
    return ENV_PREFIX + key.upper().replace(".", "_")


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, RawValue]:
    """
    Parses flat `key = value` lines with `#` comments.

    Raises:
        ConfigError: On a malformed line, an unknown key or a duplicate key.
    """
    values: Dict[str, RawValue] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got '{line}'", source, lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_MAP:
            raise ConfigError(f"unknown key '{key}'", source, lineno)
        if not value:
            raise ConfigError(f"key '{key}' has no value", source, lineno)
        if key in values:
            raise ConfigError(f"duplicate key '{key}'", source, lineno)
        values[key] = (value, source, lineno)
    return values


def env_overrides(environ: Optional[Mapping[str, str]] = None) -> Dict[str, RawValue]:
    """Collects `COREASON_RLV_<SECTION>_<NAME>` variables for every known key."""
    env = os.environ if environ is None else environ
    found: Dict[str, RawValue] = {}
    for key in KEY_MAP:
        name = env_var_name(key)
        if name in env:
            found[key] = (env[name].strip(), f"<env {name}>", None)
    return found


def parse_overrides(overrides: Sequence[str]) -> Dict[str, RawValue]:
    """
    Parses `--set key=value` arguments.

    Raises:
        ConfigError: On a malformed override or an unknown key.
    """
    found: Dict[str, RawValue] = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' must look like key=value", "<override>")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in KEY_MAP:
            raise ConfigError(f"unknown key '{key}'", "<override>")
        found[key] = (value, "<override>", None)
    return found


def resolve_config(layers: Sequence[Mapping[str, RawValue]]) -> RunConfig:
    """
    Merges raw layers (later layers win) over the model defaults and validates the result.

    Raises:
        ConfigError: If a required key is missing or a value is invalid; the message names
            the key and, for file values, the line it came from.
    """
    merged: Dict[str, RawValue] = {}
    for layer in layers:
        merged.update(layer)
    if "rl.method" not in merged:
        raise ConfigError("missing required key 'rl.method'")
    try:
        return RunConfig(**{KEY_MAP[key]: value for key, (value, _, _) in merged.items()})
    except ValidationError as e:
        first = e.errors()[0]
        field = str(first["loc"][0]) if first["loc"] else ""
        key = FIELD_TO_KEY.get(field, field)
        source, line = (merged[key][1], merged[key][2]) if key in merged else (None, None)
        raise ConfigError(f"invalid value for '{key}': {first['msg']}", source, line) from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Loads a RunConfig with precedence: defaults < file < environment < overrides.

    Raises:
        ConfigError: If the file cannot be read or any layer is invalid.
    """
    layers = []
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError(f"cannot read config: {e}", str(path)) from e
        layers.append(parse_config_text(text, str(path)))
    layers.append(env_overrides(environ))
    layers.append(parse_overrides(overrides))
    config = resolve_config(layers)
    logger.debug(f"Resolved config for method {config.method.value}")
    return config


def _format(value: object) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo_config(config: RunConfig) -> str:
    """The fully resolved config in file format; feeding it back reproduces `config`."""
    lines = [f"{key} = {_format(getattr(config, field))}" for key, field in KEY_MAP.items()]
    return "\n".join(lines) + "\n"


def run_id(config: RunConfig) -> str:
    """First 12 hex digits of the SHA-256 of the config echo (seed included)."""
    return hashlib.sha256(echo_config(config).encode("utf-8")).hexdigest()[:12]
