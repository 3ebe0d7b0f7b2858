"""Run configuration: one YAML file, strict keys, flat flag overrides.

A config file has up to five sections — ``provider``, ``pipeline``,
``attack_patterns``, ``eval``, ``paths`` — each mapping onto a dataclass.
Unknown sections or keys are errors, not warnings: a typo that silently used
a default once cost someone an afternoon.  Command-line overrides arrive as
dotted keys (``provider.context_window=8192``) and win over the file.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from .attack_patterns import AttackPatternConfig
from .entity_pipeline import EntityPipelineConfig
from .evaluation import EVAL_KINDS
from .llm import HashEmbedder, HttpProvider, ProviderConfig, ReplayProvider, ScriptedProvider, load_script

logger = logging.getLogger(__name__)

PROVIDER_KINDS = ("live", "replay", "scripted")


class ConfigError(ValueError):
    pass


@dataclass
class EvalConfig:
    kinds: tuple[str, ...] = EVAL_KINDS
    subset_rule: bool = True
    benchmark_seed: str = "cti2stix"
    negatives: Optional[int] = None


@dataclass
class PathsConfig:
    catalog: Optional[str] = None
    script: Optional[str] = None
    plugins: Optional[str] = None
    out_dir: str = "out"


@dataclass
class AppConfig:
    provider_kind: str = "live"
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    pipeline: EntityPipelineConfig = field(default_factory=EntityPipelineConfig)
    attack_patterns: AttackPatternConfig = field(default_factory=AttackPatternConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


_SECTION_TYPES = {
    "provider": ProviderConfig,
    "pipeline": EntityPipelineConfig,
    "attack_patterns": AttackPatternConfig,
    "eval": EvalConfig,
    "paths": PathsConfig,
}

#: dataclass fields that are not settable from YAML (code-defined objects)
_UNSETTABLE = {("pipeline", "queries")}


def _coerce(section: str, name: str, current: Any, value: Any) -> Any:
    if isinstance(current, tuple):
        if isinstance(value, (list, tuple)):
            return tuple(value)
        if isinstance(value, str):
            return tuple(v.strip() for v in value.split(",") if v.strip())
    if isinstance(current, bool) and isinstance(value, str):
        lowered = value.strip().lower()
        if lowered in ("true", "on", "yes", "1"):
            return True
        if lowered in ("false", "off", "no", "0"):
            return False
        raise ConfigError(f"{section}.{name}: expected a boolean, got {value!r}")
    if isinstance(current, int) and not isinstance(current, bool) and isinstance(value, str):
        return int(value)
    if isinstance(current, float) and isinstance(value, str):
        return float(value)
    return value


def _apply_section(obj: Any, section: str, data: Mapping[str, Any]) -> Any:
    known = {f.name for f in fields(obj)}
    updates: dict[str, Any] = {}
    for key, value in data.items():
        if key not in known or (section, key) in _UNSETTABLE:
            raise ConfigError(f"unknown config key: {section}.{key}")
        updates[key] = _coerce(section, key, getattr(obj, key), value)
    return dataclasses.replace(obj, **updates)


def _apply_mapping(config: AppConfig, data: Mapping[str, Any]) -> AppConfig:
    for section, content in data.items():
        if section == "provider_kind":
            if content not in PROVIDER_KINDS:
                raise ConfigError(
                    f"provider_kind must be one of {', '.join(PROVIDER_KINDS)}; got {content!r}"
                )
            config.provider_kind = content
            continue
        if section not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section: {section}")
        if not isinstance(content, Mapping):
            raise ConfigError(f"config section {section} must be a mapping")
        setattr(config, section, _apply_section(getattr(config, section), section, content))
    return config


def load_config(
    path: Union[str, Path, None] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> AppConfig:
    """Defaults, then the YAML file, then dotted-key overrides."""
    config = AppConfig()
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        if raw is None:
            raw = {}
        if not isinstance(raw, Mapping):
            raise ConfigError("config file must contain a mapping at the top level")
        config = _apply_mapping(config, raw)
    if overrides:
        nested: dict[str, Any] = {}
        for dotted, value in overrides.items():
            if dotted == "provider_kind":
                nested[dotted] = value
                continue
            if "." not in dotted:
                raise ConfigError(f"override must look like section.key=value: {dotted!r}")
            section, key = dotted.split(".", 1)
            nested.setdefault(section, {})[key] = value
        config = _apply_mapping(config, nested)
    return config


def make_provider(config: AppConfig) -> Any:
    """Build the provider the run will talk to.

    Scripted runs default the embedding model id to the hash embedder's so a
    shared catalog cache can never mix stub vectors with real ones.
    """
    kind = config.provider_kind
    if kind == "live":
        return HttpProvider(config.provider)
    if kind == "replay":
        if not config.provider.cache_path:
            raise ConfigError("replay provider needs provider.cache_path")
        return ReplayProvider(config.provider.cache_path, config.provider)
    if kind == "scripted":
        if not config.paths.script:
            raise ConfigError("scripted provider needs paths.script")
        provider_config = config.provider
        defaults = ProviderConfig()
        if provider_config.embedding_model == defaults.embedding_model:
            provider_config = dataclasses.replace(
                provider_config, embedding_model="hash-32"
            )
        return ScriptedProvider(
            load_script(config.paths.script),
            config=provider_config,
            embedder=HashEmbedder(),
        )
    raise ConfigError(f"unknown provider kind: {kind!r}")


def dump_config(config: AppConfig) -> str:
    """Effective configuration as YAML, round-trippable through load_config."""
    data: dict[str, Any] = {"provider_kind": config.provider_kind}
    for section, obj in (
        ("provider", config.provider),
        ("pipeline", config.pipeline),
        ("attack_patterns", config.attack_patterns),
        ("eval", config.eval),
        ("paths", config.paths),
    ):
        content = {}
        for f in fields(obj):
            if (section, f.name) in _UNSETTABLE:
                continue
            value = getattr(obj, f.name)
            if isinstance(value, tuple):
                value = list(value)
            content[f.name] = value
        data[section] = content
    return yaml.safe_dump(data, sort_keys=False, default_flow_style=False)
