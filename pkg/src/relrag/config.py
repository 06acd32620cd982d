"""Run configuration: YAML file -> pipeline config, gateway, and indices."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .corpus import load_corpus
from .dense import HashEmbeddingProvider, RemoteEmbeddingProvider, load_dense_index
from .gateway import HTTPGateway, MockGateway
from .lexical import load_lexical_index
from .pipeline import Indices, PipelineConfig
from .relations import RelationRegistry, default_registry, load_registry

CORPUS_FILE = "corpus.bin"
LEXICAL_FILE = "lexical.idx"
DENSE_FILE = "dense.idx"
META_FILE = "meta.json"

EMBED_ENDPOINT_ENV_VAR = "RELRAG_EMBED_ENDPOINT"


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    pipeline: PipelineConfig
    index_dir: Path | None
    registry_path: Path | None
    gateway_cfg: dict = field(default_factory=dict)
    dense_cfg: dict = field(default_factory=dict)
    workers: int = 1

    def to_dict(self) -> dict:
        gateway = dict(self.gateway_cfg)
        gateway.pop("auth_token", None)  # never echo secrets
        return {
            "pipeline": self.pipeline.to_dict(),
            "index_dir": str(self.index_dir) if self.index_dir else None,
            "registry": str(self.registry_path) if self.registry_path else None,
            "gateway": gateway,
            "dense": self.dense_cfg,
            "workers": self.workers,
        }


def load_run_config(path: str | Path) -> RunConfig:
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(doc, dict):
        raise ConfigError("config file must be a mapping")
    known_pipeline = {
        "k",
        "retrieval_mode",
        "use_paraphrases_in",
        "summarizer_model",
        "generator_model",
        "retrieval_depth",
        "c_rrf",
        "summary_max_tokens",
        "token_budget",
        "no_context",
    }
    pipeline_kwargs = {k: v for k, v in doc.items() if k in known_pipeline}
    if "use_paraphrases_in" in pipeline_kwargs:
        pipeline_kwargs["use_paraphrases_in"] = frozenset(pipeline_kwargs["use_paraphrases_in"])
    extra = set(doc) - known_pipeline - {"index_dir", "registry", "gateway", "dense", "workers"}
    if extra:
        raise ConfigError(f"unknown config keys: {sorted(extra)}")
    try:
        pipeline = PipelineConfig(**pipeline_kwargs)
    except Exception as exc:
        raise ConfigError(f"invalid pipeline configuration: {exc}") from exc
    base = Path(path).parent

    def _resolve(p) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base / p

    gateway_cfg = dict(doc.get("gateway") or {})
    # one budget governs both truncation and dispatch-time enforcement
    gateway_cfg.setdefault("token_budget", pipeline.token_budget)
    return RunConfig(
        pipeline=pipeline,
        index_dir=_resolve(doc.get("index_dir")),
        registry_path=_resolve(doc.get("registry")),
        gateway_cfg=gateway_cfg,
        dense_cfg=doc.get("dense") or {},
        workers=int(doc.get("workers", 1)),
    )


def build_registry(cfg: RunConfig) -> RelationRegistry:
    if cfg.registry_path is None:
        return default_registry()
    return load_registry(cfg.registry_path)


def build_gateway(gateway_cfg: dict, config_dir: Path | None = None):
    mode = gateway_cfg.get("mode", "mock")
    if mode == "mock":
        script = gateway_cfg.get("script")
        if not script:
            raise ConfigError("mock gateway requires a 'script' file path")
        script_path = Path(script)
        if not script_path.is_absolute() and config_dir is not None:
            script_path = config_dir / script_path
        budget = int(gateway_cfg.get("token_budget", 2048))
        return MockGateway.from_file(script_path, token_budget=budget)
    if mode == "http":
        return HTTPGateway(
            base_url=gateway_cfg.get("base_url"),
            model=gateway_cfg.get("model", ""),
            max_retries=int(gateway_cfg.get("max_retries", 3)),
            timeout=float(gateway_cfg.get("timeout", 60.0)),
            token_budget=int(gateway_cfg.get("token_budget", 2048)),
            max_in_flight=int(gateway_cfg.get("max_in_flight", 8)),
        )
    raise ConfigError(f"unknown gateway mode {mode!r} (use 'mock' or 'http')")


def build_provider(meta: dict, dense_cfg: dict):
    """Rebuild the query-time embedding provider from index metadata."""
    kind = meta.get("kind")
    if kind == "hash":
        return HashEmbeddingProvider(dimension=meta["dimension"], seed=meta["seed"])
    if kind in ("remote", "import"):
        base_url = dense_cfg.get("base_url") or os.environ.get(EMBED_ENDPOINT_ENV_VAR)
        if not base_url:
            raise ConfigError(
                f"dense provider {meta.get('name')!r} needs an embedding endpoint "
                f"(dense.base_url or {EMBED_ENDPOINT_ENV_VAR})"
            )
        return RemoteEmbeddingProvider(
            base_url=base_url,
            dimension=meta["dimension"],
            name=meta["name"],
            batch_size=int(dense_cfg.get("batch_size", 32)),
            max_in_flight=int(dense_cfg.get("max_in_flight", 4)),
        )
    raise ConfigError(f"unknown dense provider kind {kind!r} in index metadata")


def load_indices(index_dir: Path, dense_cfg: dict) -> Indices:
    corpus = load_corpus(index_dir / CORPUS_FILE)
    lexical_index = load_lexical_index(index_dir / LEXICAL_FILE)
    dense_index = load_dense_index(index_dir / DENSE_FILE)
    meta = json.loads((index_dir / META_FILE).read_text(encoding="utf-8"))
    provider = build_provider(meta["dense_provider"], dense_cfg)
    if provider.name != dense_index.provider_name:
        raise ConfigError(
            f"query provider {provider.name!r} does not match indexed provider "
            f"{dense_index.provider_name!r}"
        )
    return Indices(corpus=corpus, lexical=lexical_index, dense=dense_index, provider=provider)
