"""Run configuration: one YAML document with a section per subsystem.

Gateway backends may be ``http`` (OpenAI-compatible endpoint) or ``mock``
(deterministic fixture file).  Flag values passed on the command line take
precedence over file values; every output artifact embeds the effective
configuration so runs stay auditable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .gateway import (
    BackendConfig,
    MockBackend,
    ModelGateway,
    OpenAiHttpBackend,
    RetryPolicy,
)
from .pipeline import PipelineConfig
from .retrieval import RetrievalConfig
from .templates import TEMPLATES_VERSION, PromptTemplateSet


@dataclass
class BackendSpec:
    """One gateway slot: where requests go and how hard to push."""

    kind: str = "mock"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = ""
    timeout_s: float = 30.0
    max_parallel_requests: int = 4
    retry_count: int = 2
    retry_backoff_s: float = 0.1
    fixture: str = ""

    def __post_init__(self):
        if self.kind not in ("mock", "http"):
            raise ConfigurationError(
                f"backend kind must be mock|http, got {self.kind!r}")

    def backend_config(self) -> BackendConfig:
        return BackendConfig(
            endpoint=self.endpoint, model=self.model,
            api_key_env=self.api_key_env, timeout_s=self.timeout_s,
            max_parallel_requests=self.max_parallel_requests,
            retry=RetryPolicy(count=self.retry_count,
                              backoff_s=self.retry_backoff_s))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "endpoint": self.endpoint, "model": self.model,
            "api_key_env": self.api_key_env, "timeout_s": self.timeout_s,
            "max_parallel_requests": self.max_parallel_requests,
            "retry_count": self.retry_count,
            "retry_backoff_s": self.retry_backoff_s, "fixture": self.fixture,
        }


@dataclass
class AppConfig:
    chat: BackendSpec = field(default_factory=BackendSpec)
    score: BackendSpec | None = None
    embed: BackendSpec | None = None
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    alpha: float = 1.0
    templates_path: str | None = None
    config_path: str | None = None

    def templates(self) -> PromptTemplateSet:
        if self.templates_path:
            return PromptTemplateSet.from_file(self.templates_path)
        return PromptTemplateSet()

    def to_dict(self) -> dict:
        return {
            "gateway": {
                "chat": self.chat.to_dict(),
                "score": self.score.to_dict() if self.score else None,
                "embed": self.embed.to_dict() if self.embed else None,
            },
            "retrieval": self.retrieval.to_dict(),
            "pipeline": self.pipeline.to_dict(),
            "alpha": self.alpha,
            "templates_path": self.templates_path,
        }

    def provenance(self) -> dict:
        return {
            "config": self.to_dict(),
            "templates_version": TEMPLATES_VERSION,
            "template_hashes": self.templates().hashes(),
        }


def _build_spec(section: dict | None) -> BackendSpec | None:
    if section is None:
        return None
    known = {f for f in BackendSpec.__dataclass_fields__}
    unknown = set(section) - known
    if unknown:
        raise ConfigurationError(
            f"unknown backend settings: {sorted(unknown)}")
    return BackendSpec(**section)


def load_config(path: str | Path | None = None) -> AppConfig:
    """Parse the YAML config file; defaults apply for absent sections."""
    if path is None:
        return AppConfig()
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config root must be a mapping in {path}")
    known_sections = {"gateway", "retrieval", "pipeline", "templates", "alpha"}
    unknown = set(raw) - known_sections
    if unknown:
        raise ConfigurationError(f"unknown config sections: {sorted(unknown)}")

    gateway_section = raw.get("gateway", {}) or {}
    chat = _build_spec(gateway_section.get("chat")) or BackendSpec()
    score = _build_spec(gateway_section.get("score"))
    embed = _build_spec(gateway_section.get("embed"))

    retrieval_section = dict(raw.get("retrieval", {}) or {})
    alpha = float(retrieval_section.pop("alpha", raw.get("alpha", 1.0)))
    try:
        retrieval = RetrievalConfig(**retrieval_section)
    except TypeError as exc:
        raise ConfigurationError(f"bad retrieval section: {exc}") from exc

    pipeline_section = raw.get("pipeline", {}) or {}
    try:
        pipeline = PipelineConfig(**pipeline_section)
    except TypeError as exc:
        raise ConfigurationError(f"bad pipeline section: {exc}") from exc

    templates_section = raw.get("templates", {}) or {}
    templates_path = templates_section.get("path")
    if templates_path:
        base = Path(path).parent
        candidate = Path(templates_path)
        if not candidate.is_absolute():
            templates_path = str(base / candidate)

    return AppConfig(chat=chat, score=score, embed=embed,
                     retrieval=retrieval, pipeline=pipeline, alpha=alpha,
                     templates_path=templates_path, config_path=str(path))


def _instantiate(spec: BackendSpec, base: str | Path | None,
                 shared_mocks: dict[str, MockBackend]):
    if spec.kind == "mock":
        fixture = spec.fixture
        if not fixture:
            raise ConfigurationError(
                "mock backend requires a fixture file path")
        fixture_path = Path(fixture)
        if base is not None and not fixture_path.is_absolute():
            fixture_path = Path(base) / fixture_path
        key = str(fixture_path)
        if key not in shared_mocks:
            shared_mocks[key] = MockBackend.from_file(fixture_path)
        return shared_mocks[key]
    return OpenAiHttpBackend(spec.backend_config())


def build_gateway(config: AppConfig) -> ModelGateway:
    """Construct the gateway described by the config.

    Mock backends sharing one fixture file share one instance, so call
    counters aggregate across capabilities the way a single mock server
    would.
    """
    base = Path(config.config_path).parent if config.config_path else None
    shared_mocks: dict[str, MockBackend] = {}
    chat_backend = _instantiate(config.chat, base, shared_mocks)
    score_spec = config.score or config.chat
    embed_spec = config.embed or config.chat
    score_backend = _instantiate(score_spec, base, shared_mocks)
    embed_backend = _instantiate(embed_spec, base, shared_mocks)
    return ModelGateway(
        chat_backend, score_backend, embed_backend,
        chat_config=config.chat.backend_config(),
        score_config=score_spec.backend_config(),
        embed_config=embed_spec.backend_config(),
    )
