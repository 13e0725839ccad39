"""Configuration file handling and wiring of gateway/agent objects.

The config is UTF-8 JSON (default ``./recode.json``). API keys are referenced
by environment-variable name, never stored inline.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Any

from .agent import AgentContext
from .errors import ConfigError
from .gateway import Gateway, HttpProvider, LIVE, RECORD, REPLAY
from .prompts import PromptLibrary
from .types import AgentConfig

DEFAULT_CONFIG_NAME = "recode.json"

DEFAULT_RUNNER_CMD = [sys.executable, "-m", "recode_runner"]


class Config:
    """Thin dotted-path reader over the parsed JSON document."""

    def __init__(self, data: dict[str, Any] | None = None, path: Path | None = None):
        self.data = data or {}
        self.path = path

    def get(self, dotted: str, default: Any = None) -> Any:
        node: Any = self.data
        for key in dotted.split("."):
            if not isinstance(node, dict) or key not in node:
                return default
            node = node[key]
        return node

    def require(self, dotted: str) -> Any:
        value = self.get(dotted)
        if value is None:
            raise ConfigError(f"missing required config key {dotted!r}", key=dotted)
        return value


def load_config(path: str | Path | None = None) -> Config:
    """Load a config file; a missing default file yields built-in defaults."""
    candidate = Path(path) if path is not None else Path(DEFAULT_CONFIG_NAME)
    if not candidate.is_file():
        if path is not None:
            raise ConfigError(f"config file not found: {candidate}")
        return Config({}, None)
    try:
        return Config(json.loads(candidate.read_text(encoding="utf-8")), candidate)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {candidate} is not valid JSON: {exc}") from exc


def agent_config_from(config: Config, overrides: dict[str, Any] | None = None) -> AgentConfig:
    agent = dict(config.get("agent", {}) or {})
    models = config.get("models", {}) or {}
    if "generation" in models:
        agent.setdefault("generation_model", models["generation"])
    if "judge" in models:
        agent.setdefault("judge_model", models["judge"])
    if "embedding" in models:
        agent.setdefault("embedding_model", models["embedding"])
    if config.get("sandbox.timeout_s") is not None:
        agent.setdefault("sandbox_timeout_s", config.get("sandbox.timeout_s"))
    for key, value in (overrides or {}).items():
        if value is not None:
            agent[key] = value
    try:
        return AgentConfig(**agent)
    except TypeError as exc:
        raise ConfigError(f"invalid agent config: {exc}") from exc


def make_gateway(config: Config, mode: str | None = None) -> Gateway:
    mode = mode or config.get("gateway.mode", LIVE)
    cache_dir = config.get("gateway.cache_dir", "cache")
    provider = None
    if mode in (LIVE, RECORD):
        base_url = config.get("provider.base_url")
        if not base_url:
            raise ConfigError(
                f"gateway mode {mode!r} needs provider.base_url in the config",
                key="provider.base_url",
            )
        provider = HttpProvider(base_url=base_url, api_key_env=config.get("provider.api_key_env", ""))
    if config.path is not None and cache_dir is not None and not Path(cache_dir).is_absolute():
        cache_dir = str(config.path.parent / cache_dir)
    return Gateway(
        mode=mode,
        cache_dir=cache_dir if mode in (RECORD, REPLAY) else None,
        provider=provider,
        overwrite=bool(config.get("gateway.overwrite", False)),
    )


def prompt_library_from(config: Config) -> PromptLibrary:
    # prompt.determinism_clause is the documented key; the prompts.* spelling
    # is accepted as well.
    clause = config.get("prompt.determinism_clause")
    if clause is None:
        clause = config.get("prompts.determinism_clause", True)
    return PromptLibrary(directory=config.get("prompts.dir"), determinism_clause=bool(clause))


def make_agent_context(
    config: Config,
    mode: str | None = None,
    agent_overrides: dict[str, Any] | None = None,
) -> AgentContext:
    cfg = agent_config_from(config, agent_overrides)
    runner_cmd = config.get("sandbox.runner_cmd", DEFAULT_RUNNER_CMD)
    if isinstance(runner_cmd, str):
        runner_cmd = runner_cmd.split()
    ocr_cmd = config.get("ocr.cmd")
    if isinstance(ocr_cmd, str):
        ocr_cmd = ocr_cmd.split()
    return AgentContext(
        gateway=make_gateway(config, mode),
        cfg=cfg,
        runner_cmd=list(runner_cmd),
        prompt_library=prompt_library_from(config),
        ocr_cmd=ocr_cmd,
        render_parallelism=int(config.get("sandbox.parallelism", 1)),
    )
