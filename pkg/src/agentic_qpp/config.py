"""Run configuration: TOML parsing, validation, path resolution.

All paths in a config file are relative to the file itself.  Inconsistent
configurations are rejected here, before any episode runs.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import EpisodeBudget
from .errors import ConfigurationError
from .qpp import PredictorConfig

PRESETS = ("lexical", "rerank", "lexical%20>>rerank", "dense")
BACKEND_TYPES = ("http", "scripted", "rule")
STAGE_TYPES = ("lexical", "cutoff", "rerank", "dense")
SCORER_TYPES = ("http", "cosine", "table")
EMBEDDER_TYPES = ("http", "lookup")


@dataclass(frozen=True)
class StageSpec:
    type: str
    k: int | None = None
    depth: int | None = None
    k1: float | None = None
    b: float | None = None


@dataclass(frozen=True)
class PipelineSpec:
    preset: str | None = None
    stages: tuple[StageSpec, ...] = ()
    search_depth: int = 100
    scorer: str | None = None
    scorer_url: str | None = None
    scorer_table: Path | None = None


@dataclass(frozen=True)
class EmbedderSpec:
    type: str
    url: str | None = None
    path: Path | None = None
    dim: int | None = None


@dataclass(frozen=True)
class BackendSpec:
    type: str
    url: str | None = None
    path: Path | None = None
    reformulations: tuple[str, ...] = ("{question}",)


@dataclass(frozen=True)
class RunConfig:
    corpus_path: Path
    qa_path: Path
    output_dir: Path
    pipeline: PipelineSpec
    backend: BackendSpec
    embeddings_path: Path | None = None
    embedder: EmbedderSpec | None = None
    context_k: int = 3
    predictors: PredictorConfig = field(default_factory=PredictorConfig)
    budget: EpisodeBudget = field(default_factory=EpisodeBudget)
    worker_count: int = 1
    random_seed: int = 0


def _require(table: dict, key: str, where: str):
    if key not in table:
        raise ConfigurationError(f"{where}: missing required key {key!r}")
    return table[key]


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def _parse_pipeline(table: dict, base: Path) -> PipelineSpec:
    preset = table.get("preset")
    raw_stages = table.get("stages", [])
    if preset is None and not raw_stages:
        raise ConfigurationError("[pipeline]: give either a preset or a stage list")
    if preset is not None and raw_stages:
        raise ConfigurationError("[pipeline]: preset and stages are mutually exclusive")
    if preset is not None and preset not in PRESETS:
        raise ConfigurationError(f"[pipeline]: unknown preset {preset!r} (known: {PRESETS})")
    stages = []
    for position, stage in enumerate(raw_stages):
        stage_type = _require(stage, "type", f"[pipeline] stage {position}")
        if stage_type not in STAGE_TYPES:
            raise ConfigurationError(
                f"[pipeline] stage {position}: unknown type {stage_type!r} (known: {STAGE_TYPES})"
            )
        stages.append(
            StageSpec(
                type=stage_type,
                k=stage.get("k"),
                depth=stage.get("depth"),
                k1=stage.get("k1"),
                b=stage.get("b"),
            )
        )
    scorer = table.get("scorer")
    if scorer is not None and scorer not in SCORER_TYPES:
        raise ConfigurationError(f"[pipeline]: unknown scorer {scorer!r} (known: {SCORER_TYPES})")
    scorer_table = table.get("scorer_table")
    return PipelineSpec(
        preset=preset,
        stages=tuple(stages),
        search_depth=int(table.get("search_depth", 100)),
        scorer=scorer,
        scorer_url=table.get("scorer_url"),
        scorer_table=_resolve(base, scorer_table) if scorer_table else None,
    )


def _parse_embedder(table: dict, base: Path) -> EmbedderSpec:
    embedder_type = _require(table, "type", "[embedder]")
    if embedder_type not in EMBEDDER_TYPES:
        raise ConfigurationError(
            f"[embedder]: unknown type {embedder_type!r} (known: {EMBEDDER_TYPES})"
        )
    if embedder_type == "http" and not table.get("url"):
        raise ConfigurationError("[embedder]: http embedder requires a url")
    if embedder_type == "lookup" and not table.get("path"):
        raise ConfigurationError("[embedder]: lookup embedder requires a path")
    path = table.get("path")
    return EmbedderSpec(
        type=embedder_type,
        url=table.get("url"),
        path=_resolve(base, path) if path else None,
        dim=table.get("dim"),
    )


def _parse_backend(table: dict, base: Path) -> BackendSpec:
    backend_type = _require(table, "type", "[backend]")
    if backend_type not in BACKEND_TYPES:
        raise ConfigurationError(
            f"[backend]: unknown type {backend_type!r} (known: {BACKEND_TYPES})"
        )
    if backend_type == "http" and not table.get("url"):
        raise ConfigurationError("[backend]: http backend requires a url")
    if backend_type == "scripted" and not table.get("path"):
        raise ConfigurationError("[backend]: scripted backend requires a path")
    reformulations = tuple(table.get("reformulations", ["{question}"]))
    if backend_type == "rule" and not reformulations:
        raise ConfigurationError("[backend]: rule backend requires reformulations")
    path = table.get("path")
    return BackendSpec(
        type=backend_type,
        url=table.get("url"),
        path=_resolve(base, path) if path else None,
        reformulations=reformulations,
    )


def _pipeline_is_dense(spec: PipelineSpec) -> bool:
    if spec.preset == "dense":
        return True
    return any(stage.type == "dense" for stage in spec.stages)


def _pipeline_has_rerank(spec: PipelineSpec) -> bool:
    if spec.preset in ("rerank", "lexical%20>>rerank"):
        return True
    return any(stage.type == "rerank" for stage in spec.stages)


def load_run_config(path) -> RunConfig:
    """Parse and validate a TOML run config; raises ConfigurationError on problems."""
    path = Path(path)
    try:
        with open(path, "rb") as handle:
            raw = tomllib.load(handle)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid TOML: {exc}") from None
    base = path.parent

    pipeline = _parse_pipeline(_require(raw, "pipeline", str(path)), base)
    backend = _parse_backend(_require(raw, "backend", str(path)), base)
    embedder = _parse_embedder(raw["embedder"], base) if "embedder" in raw else None

    try:
        predictors = PredictorConfig(**raw.get("predictors", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[predictors]: {exc}") from None
    try:
        budget = EpisodeBudget(**raw.get("budget", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[budget]: {exc}") from None

    embeddings = raw.get("embeddings_path")
    config = RunConfig(
        corpus_path=_resolve(base, _require(raw, "corpus_path", str(path))),
        qa_path=_resolve(base, _require(raw, "qa_path", str(path))),
        output_dir=_resolve(base, _require(raw, "output_dir", str(path))),
        pipeline=pipeline,
        backend=backend,
        embeddings_path=_resolve(base, embeddings) if embeddings else None,
        embedder=embedder,
        context_k=int(raw.get("context_k", 3)),
        predictors=predictors,
        budget=budget,
        worker_count=int(raw.get("worker_count", 1)),
        random_seed=int(raw.get("random_seed", 0)),
    )
    _validate(config)
    return config


def _validate(config: RunConfig) -> None:
    if config.context_k < 1:
        raise ConfigurationError("context_k must be >= 1")
    if config.worker_count < 1:
        raise ConfigurationError("worker_count must be >= 1")
    needs_embeddings = _pipeline_is_dense(config.pipeline) or config.pipeline.scorer == "cosine"
    if needs_embeddings and config.embeddings_path is None:
        raise ConfigurationError(
            "dense retrieval or cosine scoring requires embeddings_path"
        )
    if _pipeline_is_dense(config.pipeline) and config.embedder is None:
        raise ConfigurationError("a dense pipeline requires an [embedder] section")
    if config.pipeline.scorer == "cosine" and config.embedder is None:
        raise ConfigurationError("the cosine scorer requires an [embedder] section")
    if _pipeline_has_rerank(config.pipeline):
        if config.pipeline.scorer is None:
            raise ConfigurationError("a rerank stage requires a [pipeline] scorer")
        if config.pipeline.scorer == "http" and not config.pipeline.scorer_url:
            raise ConfigurationError("the http scorer requires scorer_url")
        if config.pipeline.scorer == "table" and not config.pipeline.scorer_table:
            raise ConfigurationError("the table scorer requires scorer_table")
    for file_key in ("corpus_path", "qa_path"):
        file_path = getattr(config, file_key)
        if not file_path.exists():
            raise ConfigurationError(f"{file_key} {file_path} does not exist")
    if config.embeddings_path is not None and not config.embeddings_path.exists():
        raise ConfigurationError(f"embeddings_path {config.embeddings_path} does not exist")
    if config.backend.type == "scripted" and not config.backend.path.exists():
        raise ConfigurationError(f"script file {config.backend.path} does not exist")
    if config.embedder and config.embedder.type == "lookup" and not config.embedder.path.exists():
        raise ConfigurationError(f"embedder table {config.embedder.path} does not exist")
