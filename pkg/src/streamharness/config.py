"""Run configuration: JSON files with strict key validation.

Unknown keys are hard errors that name the offending field; silently
ignored typos in evaluation configs are how wrong numbers get published.
Environment variable interpolation (``${VAR}``) is supported only for
secret-bearing fields so configs can be committed without tokens.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .session import BackendConfig, DEFAULT_SYSTEM_PROMPT
from .timeline import DEFAULT_FORWARD_DELTA

_ENV_REF = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")

#: Fields allowed to hold ${VAR} references.
_SECRET_FIELDS = {"auth_token", "judge_auth_token"}


def _resolve_secret(value: Optional[str], field_name: str) -> Optional[str]:
    if value is None:
        return None
    match = _ENV_REF.match(value)
    if match is None:
        return value
    resolved = os.environ.get(match.group(1))
    if resolved is None:
        raise ConfigError(f"{field_name} references unset environment variable {match.group(1)}")
    return resolved


@dataclass(frozen=True)
class JudgeConfig:
    endpoint: Optional[str] = None
    model: Optional[str] = None
    auth_token: Optional[str] = None
    concurrency: int = 8
    parse_retries: int = 1
    double_forward_scores: bool = True

    def __post_init__(self):
        if self.concurrency < 1:
            raise ConfigError("judge concurrency must be >= 1")
        if self.parse_retries < 0:
            raise ConfigError("judge parse_retries must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    manifest: Optional[str] = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    judge: JudgeConfig = field(default_factory=JudgeConfig)
    fps: float = 0.5
    forward_delta: int = DEFAULT_FORWARD_DELTA
    cache_dir: str = "cache"
    out_dir: str = "out"
    report_format: str = "both"  # json | table | both
    seed: int = 42

    def __post_init__(self):
        if self.fps <= 0:
            raise ConfigError("fps must be positive")
        if self.forward_delta < 0:
            raise ConfigError("forward_delta must be >= 0")
        if self.report_format not in ("json", "table", "both"):
            raise ConfigError(f"unknown report_format: {self.report_format!r}")

    def content_hash(self) -> str:
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _build(cls, obj: dict, path: str):
    """Construct a dataclass from a JSON object, rejecting unknown keys."""
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in obj.items():
        if key not in known:
            raise ConfigError(f"unknown config field {path + key!r}")
        if key in _SECRET_FIELDS or (key == "auth_token"):
            value = _resolve_secret(value, f"{path}{key}")
        kwargs[key] = value
    return cls(**kwargs)


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config root must be an object, got {type(obj).__name__}")

    backend_obj = obj.pop("backend", None)
    judge_obj = obj.pop("judge", None)
    config = _build(RunConfig, obj, "")
    if backend_obj is not None:
        if not isinstance(backend_obj, dict):
            raise ConfigError("backend must be an object")
        config = dataclasses.replace(config, backend=_build(BackendConfig, backend_obj, "backend."))
    if judge_obj is not None:
        if not isinstance(judge_obj, dict):
            raise ConfigError("judge must be an object")
        config = dataclasses.replace(config, judge=_build(JudgeConfig, judge_obj, "judge."))
    return config


__all__ = [
    "JudgeConfig",
    "RunConfig",
    "load_config",
    "DEFAULT_SYSTEM_PROMPT",
]
