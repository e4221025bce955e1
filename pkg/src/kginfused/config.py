"""Run configuration: INI file, then ``KGRAG_<SECTION>_<KEY>`` env vars, then CLI flags."""

from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping

from .activation import ActivationConfig
from .pipeline import MODES, PipelineConfig, RetrievalPlan

PATH_KEYS = (
    "triples", "entities", "relations", "descriptions", "snapshot",
    "entity_vectors", "entity_ids", "corpus", "corpus_vectors", "corpus_ids",
    "dataset", "transcript", "query_cache", "ka_inputs",
)


class ConfigError(ValueError):
    pass


@dataclass
class GatewaySettings:
    base_url: str = "https://api.openai.com"
    api_key: str | None = None
    models: dict[str, str] = field(default_factory=lambda: {"default": "gpt-4o-mini"})
    max_retries: int = 3
    max_in_flight: int = 8
    embed_url: str | None = None
    hash_embed_dim: int | None = None


@dataclass
class RunConfig:
    paths: dict[str, str] = field(default_factory=dict)
    activation: ActivationConfig = ActivationConfig()
    plan: RetrievalPlan = RetrievalPlan()
    gateway: GatewaySettings = field(default_factory=GatewaySettings)
    mode: str = "kg_infused"
    out: str = "runs"
    seed: int = 0
    workers: int = 1

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.activation, self.plan)

    def path(self, key: str) -> Path | None:
        value = self.paths.get(key)
        return Path(value) if value else None

    def require(self, *keys: str) -> list[Path]:
        out = []
        for key in keys:
            p = self.path(key)
            if p is None:
                raise ConfigError(f"missing path setting {key!r}")
            if not p.exists():
                raise ConfigError(f"{key}: {p} does not exist")
            out.append(p)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["gateway"].get("api_key"):
            d["gateway"]["api_key"] = "***"
        return d


def _flatten(parser: configparser.ConfigParser) -> dict[tuple[str, str], str]:
    return {(sec, key): parser[sec][key] for sec in parser.sections() for key in parser[sec]}


def _from_env(env: Mapping[str, str]) -> dict[tuple[str, str], str]:
    out = {}
    for name, value in env.items():
        if not name.startswith("KGRAG_"):
            continue
        rest = name[len("KGRAG_"):].lower()
        for sec in ("paths", "activation", "retrieval", "gateway", "run"):
            if rest.startswith(sec + "_"):
                out[(sec, rest[len(sec) + 1:])] = value
    # conventional gateway variables
    for var, key in (("KGRAG_API_BASE", "base_url"), ("KGRAG_API_KEY", "api_key"), ("KGRAG_MODEL", "model")):
        if env.get(var):
            out[("gateway", key)] = env[var]
    for name, value in env.items():
        if name.startswith("KGRAG_MODEL_") and value:
            out[("gateway", "model." + name[len("KGRAG_MODEL_"):].lower())] = value
    return out


def _int(raw: str, where: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected an integer, got {raw!r}") from None


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[tuple[str, str], str] | None = None,
) -> RunConfig:
    settings: dict[tuple[str, str], str] = {}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
        if not parser.read(path, encoding="utf-8"):
            raise ConfigError(f"cannot read config file {path}")
        settings.update(_flatten(parser))
    settings.update(_from_env(os.environ if env is None else env))
    settings.update(overrides or {})

    cfg = RunConfig()
    act, plan, gw = asdict(cfg.activation), asdict(cfg.plan), cfg.gateway
    for (sec, key), raw in settings.items():
        where = f"[{sec}] {key}"
        if sec == "paths":
            if key not in PATH_KEYS:
                raise ConfigError(f"{where}: unknown path key")
            cfg.paths[key] = raw
        elif sec == "activation":
            if key not in act:
                raise ConfigError(f"{where}: unknown activation setting")
            act[key] = _int(raw, where)
        elif sec == "retrieval":
            if key not in plan:
                raise ConfigError(f"{where}: unknown retrieval setting")
            plan[key] = _int(raw, where)
        elif sec == "gateway":
            if key == "model":
                gw.models["default"] = raw
            elif key.startswith("model."):
                gw.models[key[len("model."):]] = raw
            elif key in ("max_retries", "max_in_flight", "hash_embed_dim"):
                setattr(gw, key, _int(raw, where))
            elif key in ("base_url", "api_key", "embed_url"):
                setattr(gw, key, raw or None)
            else:
                raise ConfigError(f"{where}: unknown gateway setting")
        elif sec == "run":
            if key in ("seed", "workers"):
                setattr(cfg, key, _int(raw, where))
            elif key in ("mode", "out"):
                setattr(cfg, key, raw)
            else:
                raise ConfigError(f"{where}: unknown run setting")
        else:
            raise ConfigError(f"unknown section [{sec}]")
    try:
        cfg = replace(cfg, activation=ActivationConfig(**act), plan=RetrievalPlan(**plan))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if cfg.workers < 1 or gw.max_retries < 0 or gw.max_in_flight < 1:
        raise ConfigError("workers and max_in_flight must be >= 1, max_retries >= 0")
    return cfg
