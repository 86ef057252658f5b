"""Runtime configuration: defaults, YAML file loading, and override merging.

Precedence is file < environment variables < CLI flags. Environment
variables use the ``PARAORCH_<SECTION>__<FIELD>`` pattern (values parsed as
YAML scalars); flags arrive as dotted keys like ``rewards.theta_tool``.
Every constant is validated against its invariants at load time and
violations name the offending field.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, is_dataclass
from typing import Any, Mapping

import yaml

from .data_curation import CurationConfig
from .orchestrator import OrchestratorConfig
from .prompts import load_prompts
from .rewards import RewardConfig
from .rl_math import GrpoConfig
from .tool_pool import ConfigurationError, ModelEndpoint, ServiceTimeouts

ENV_PREFIX = "PARAORCH_"

DEFAULT_POOL = {
    "qwen3-30b-a3b-instruct": {"base_url": "http://localhost:8001/v1"},
    "qwen3-coder-30b-a3b-instruct": {"base_url": "http://localhost:8002/v1"},
    "gpt-oss-20b": {"base_url": "http://localhost:8003/v1"},
}
DEFAULT_MODEL = "gpt-oss-20b"
DEFAULT_SUMMARIZER = {"base_url": "http://localhost:8003/v1", "model_id": "gpt-oss-20b"}


@dataclass
class EvalSettings:
    k: int = 8
    questions_file: str | None = None
    ground_truth_file: str | None = None
    backend_mode: str = "mock"
    episode_parallelism: int = 4
    output_dir: str = "eval_out"
    seed: int | None = 0
    mock_schedule: list[list[int]] | None = None
    mock_correct_rate: float = 1.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.episode_parallelism < 1:
            raise ValueError("episode_parallelism must be >= 1")
        if self.backend_mode not in ("remote", "mock"):
            raise ValueError("backend_mode must be 'remote' or 'mock'")
        if self.backend_mode == "mock" and self.seed is None:
            raise ValueError("seed is required in mock mode")
        if not (0.0 <= self.mock_correct_rate <= 1.0):
            raise ValueError("mock_correct_rate must lie in [0, 1]")


@dataclass
class PoolSettings:
    endpoints: dict[str, ModelEndpoint]
    default_model: str

    def __post_init__(self) -> None:
        if not self.endpoints:
            raise ValueError("the model pool must contain at least one endpoint")
        if self.default_model not in self.endpoints:
            raise ValueError(
                f"default_model {self.default_model!r} is not one of {sorted(self.endpoints)}"
            )


@dataclass
class ServiceSettings:
    retrieval_url: str = "http://localhost:8100/search"
    sandbox_url: str = "http://localhost:8200/run"
    sandbox_timeout_s: float = 30.0
    retrieval_timeout_s: float = 15.0
    api_key: str | None = None

    def timeouts(self) -> ServiceTimeouts:
        return ServiceTimeouts(
            sandbox_s=self.sandbox_timeout_s, retrieval_s=self.retrieval_timeout_s
        )


@dataclass
class RuntimeConfig:
    orchestrator: OrchestratorConfig
    rewards: RewardConfig
    grpo: GrpoConfig
    curation: CurationConfig
    eval: EvalSettings
    pool: PoolSettings
    services: ServiceSettings

    def to_dict(self) -> dict[str, Any]:
        data = {}
        for f in fields(self):
            value = getattr(self, f.name)
            data[f.name] = asdict(value) if is_dataclass(value) else value
        # PromptSet bodies are bulky and not configuration constants.
        data["orchestrator"].pop("prompts", None)
        return data


def _default_tree() -> dict[str, Any]:
    return {
        "orchestrator": {},
        "summarizer": dict(DEFAULT_SUMMARIZER),
        "rewards": {},
        "grpo": {},
        "curation": {},
        "eval": {},
        "pool": {"endpoints": {k: dict(v) for k, v in DEFAULT_POOL.items()},
                 "default_model": DEFAULT_MODEL},
        "services": {},
    }


def _deep_merge(base: dict[str, Any], override: Mapping[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def _set_dotted(tree: dict[str, Any], dotted: str, value: Any) -> None:
    parts = dotted.split(".")
    node = tree
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"cannot override non-section key {dotted!r}")
    node[parts[-1]] = value


def _coerce(value: Any) -> Any:
    if isinstance(value, str):
        return yaml.safe_load(value)
    return value


def _env_overrides(env: Mapping[str, str]) -> dict[str, Any]:
    tree: dict[str, Any] = {}
    for key, raw in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        trimmed = key[len(ENV_PREFIX) :]
        if trimmed == "API_KEY":
            _set_dotted(tree, "services.api_key", raw)
            continue
        if "__" not in trimmed:
            continue
        section, field_name = trimmed.split("__", 1)
        dotted = f"{section.lower()}.{field_name.lower()}"
        _set_dotted(tree, dotted, _coerce(raw))
    return tree


def _build(section: str, cls: type, data: Mapping[str, Any]) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"{section}: unknown fields {sorted(unknown)}")
    try:
        return cls(**data)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{section}: {exc}") from exc


def _build_endpoint(section: str, name: str, data: Mapping[str, Any]) -> ModelEndpoint:
    payload = dict(data)
    payload.setdefault("model_id", name)
    try:
        return ModelEndpoint(**payload)
    except (ValueError, TypeError) as exc:
        raise ConfigurationError(f"{section}.{name}: {exc}") from exc


def load_config(
    path: str | None = None,
    overrides: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
) -> RuntimeConfig:
    """Assemble the effective configuration with file < env < flag precedence."""
    tree = _default_tree()
    if path is not None:
        with open(path, "r", encoding="utf-8") as handle:
            loaded = yaml.safe_load(handle) or {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping")
        tree = _deep_merge(tree, loaded)
    tree = _deep_merge(tree, _env_overrides(env if env is not None else os.environ))
    for dotted, value in (overrides or {}).items():
        _set_dotted(tree, dotted, _coerce(value))

    known_sections = set(_default_tree())
    unknown_sections = set(tree) - known_sections
    if unknown_sections:
        raise ConfigurationError(f"unknown config sections {sorted(unknown_sections)}")

    orch_data = dict(tree["orchestrator"])
    prompts_dir = orch_data.pop("prompts_dir", None)
    summarizer_data = dict(tree["summarizer"])
    summarizer_name = summarizer_data.pop("model_id", DEFAULT_SUMMARIZER["model_id"])
    summarizer = _build_endpoint("summarizer", summarizer_name, summarizer_data)
    orchestrator = _build(
        "orchestrator",
        OrchestratorConfig,
        {
            **orch_data,
            "summarizer_endpoint": summarizer,
            "prompts": load_prompts(prompts_dir) if prompts_dir else None,
        },
    )

    pool_data = dict(tree["pool"])
    raw_endpoints = pool_data.get("endpoints") or {}
    endpoints = {
        name: _build_endpoint("pool.endpoints", name, spec or {})
        for name, spec in raw_endpoints.items()
    }
    pool = _build(
        "pool",
        PoolSettings,
        {"endpoints": endpoints, "default_model": pool_data.get("default_model", "")},
    )

    return RuntimeConfig(
        orchestrator=orchestrator,
        rewards=_build("rewards", RewardConfig, tree["rewards"]),
        grpo=_build("grpo", GrpoConfig, tree["grpo"]),
        curation=_build("curation", CurationConfig, tree["curation"]),
        eval=_build("eval", EvalSettings, tree["eval"]),
        pool=pool,
        services=_build("services", ServiceSettings, tree["services"]),
    )
