"""Pipeline configuration (TOML) and gateway construction."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .ehr.synthetic import SyntheticConfig
from .errors import ValidationError
from .gateway import (
    API_BASE_ENV,
    ConfigurationError,
    DiskCache,
    Gateway,
    HashEmbedder,
    KeywordChat,
    OpenAIChatBackend,
    OpenAIEmbedBackend,
)
from .training import TrainingConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

TASKS = ("mortality", "readmission")
CHAT_PROFILES = ("extractor", "summarizer")
EMBED_PROFILES = ("note_encoder", "entity_encoder")

DEFAULT_PROFILES = {
    "extractor": {"kind": "keyword"},
    "summarizer": {"kind": "keyword"},
    "note_encoder": {"kind": "hash", "dim": 256},
    "entity_encoder": {"kind": "hash", "dim": 256},
}


@dataclass(frozen=True)
class Paths:
    patients: Path = Path("patients.jsonl")
    kg_nodes: Path = Path("kg_nodes.jsonl")
    kg_edges: Path = Path("kg_edges.jsonl")
    cache_dir: Path = Path("cache")
    output_dir: Path = Path("out")

    def output(self, name: str) -> Path:
        return self.output_dir / name


@dataclass(frozen=True)
class PipelineConfig:
    paths: Paths = field(default_factory=Paths)
    epsilon: float = 2.0
    eta: float = 0.6
    task: str = "mortality"
    seed: int = 0
    max_rounds: int = 3
    n_triples: int = 10
    jobs: int = 1
    gateway: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_PROFILES.items()})
    gateway_options: dict = field(default_factory=dict)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be > 0, got {self.epsilon}")
        if not 0.0 < self.eta < 1.0:
            raise ValidationError(f"eta must lie in (0, 1), got {self.eta}")
        if self.task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.jobs < 1 or self.max_rounds < 1 or self.n_triples < 0:
            raise ValidationError("jobs and max_rounds must be >= 1, n_triples >= 0")

    def override(self, **changes) -> "PipelineConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        if "cache_dir" in changes:
            changes["paths"] = replace(self.paths, cache_dir=Path(changes.pop("cache_dir")))
        if "seed" in changes:
            changes["training"] = replace(self.training, seed=changes["seed"])
            changes["synthetic"] = replace(self.synthetic, seed=changes["seed"])
        return replace(self, **changes)


_TOP_LEVEL = {"task", "seed", "max_rounds", "n_triples", "jobs"}
_SECTIONS = {"paths", "thresholds", "gateway", "training", "synthetic"}


def _check_keys(section: str, table: dict, allowed: Iterable[str]) -> None:
    unknown = set(table) - set(allowed)
    if unknown:
        raise ValidationError(f"[{section}] has unknown keys: {sorted(unknown)}")


def config_from_mapping(data: dict, base_dir: Path = Path(".")) -> PipelineConfig:
    _check_keys("top level", data, _TOP_LEVEL | _SECTIONS)
    paths_raw = data.get("paths", {})
    _check_keys("paths", paths_raw, Paths.__dataclass_fields__)
    paths = Paths(**{k: base_dir / v for k, v in paths_raw.items()})
    for name in Paths.__dataclass_fields__:
        if name not in paths_raw:
            paths = replace(paths, **{name: base_dir / getattr(Paths, name)})
    thresholds = data.get("thresholds", {})
    _check_keys("thresholds", thresholds, {"epsilon", "eta"})

    gateway_raw = dict(data.get("gateway", {}))
    profiles = {k: dict(v) for k, v in DEFAULT_PROFILES.items()}
    options = {}
    for key, value in gateway_raw.items():
        if isinstance(value, dict):
            profiles[key] = dict(value)
        else:
            options[key] = value
    _check_keys("gateway", options, {"max_attempts", "backoff", "max_in_flight"})

    seed = int(data.get("seed", 0))
    training = {"seed": seed, **data.get("training", {})}
    synthetic = {"seed": seed, **data.get("synthetic", {})}
    return PipelineConfig(
        paths=paths,
        epsilon=float(thresholds.get("epsilon", 2.0)),
        eta=float(thresholds.get("eta", 0.6)),
        task=data.get("task", "mortality"),
        seed=seed,
        max_rounds=int(data.get("max_rounds", 3)),
        n_triples=int(data.get("n_triples", 10)),
        jobs=int(data.get("jobs", 1)),
        gateway=profiles,
        gateway_options=options,
        training=TrainingConfig.from_mapping(training),
        synthetic=SyntheticConfig.from_mapping(synthetic),
    )


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read a TOML config; relative paths resolve against its directory."""
    if path is None:
        return config_from_mapping({})
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"config file {path}: {exc}") from None
    return config_from_mapping(data, path.parent)


def _http_kwargs(name: str, spec: dict) -> dict:
    endpoint = spec.get("endpoint") or os.environ.get(API_BASE_ENV)
    if not endpoint or "model" not in spec:
        raise ConfigurationError(f"gateway profile {name!r}: http backends need endpoint and model")
    kwargs = {"endpoint": endpoint, "model": spec["model"]}
    if "timeout" in spec:
        kwargs["timeout"] = float(spec["timeout"])
    if "api_key_env" in spec:
        kwargs["api_key"] = os.environ.get(spec["api_key_env"])
    return kwargs


def build_gateway(config: PipelineConfig, vocabulary: Iterable[str] = (), profiles: Iterable[str] | None = None) -> Gateway:
    """Instantiate backends for the configured profiles.

    ``keyword`` chat profiles use ``vocabulary`` (typically the KG node
    names); ``hash`` embedding profiles are fully offline.
    """
    vocabulary = list(vocabulary)
    chat, embed = {}, {}
    wanted = set(config.gateway if profiles is None else profiles)
    for name, spec in config.gateway.items():
        if name not in wanted:
            continue
        kind = spec.get("kind")
        if kind == "keyword":
            chat[name] = KeywordChat(vocabulary)
        elif kind == "hash":
            embed[name] = HashEmbedder(dim=int(spec.get("dim", 256)), seed=int(spec.get("seed", 0)))
        elif kind == "http_chat":
            chat[name] = OpenAIChatBackend(**_http_kwargs(name, spec))
        elif kind == "http_embed":
            if "dim" not in spec:
                raise ConfigurationError(f"gateway profile {name!r}: http_embed needs dim")
            embed[name] = OpenAIEmbedBackend(dim=int(spec["dim"]), **_http_kwargs(name, spec))
        else:
            raise ConfigurationError(
                f"gateway profile {name!r}: kind must be keyword, hash, http_chat or http_embed, got {kind!r}"
            )
    opts = config.gateway_options
    return Gateway(
        chat,
        embed,
        DiskCache(config.paths.cache_dir),
        max_attempts=int(opts.get("max_attempts", 3)),
        backoff=float(opts.get("backoff", 0.5)),
        max_in_flight=int(opts.get("max_in_flight", 8)),
    )
