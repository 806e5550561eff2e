"""Pipeline configuration: a YAML document with a fixed schema plus CLI overrides."""
from __future__ import annotations

import copy
import datetime as dt
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import yaml

from .llm.providers import ProviderConfig

LLM_STAGES = ("facts", "generate", "eval")
JUDGE_COUNT = 2
MODES = ("rag", "closed_book")

# Every accepted key with its default; None marks "required" for reference_date only.
DEFAULTS: dict[str, Any] = {
    "reference_date": None,
    "cohort_years": None,
    "seed": 0,
    "paths": {"articles": "articles", "snapshot": None, "work_dir": "work"},
    "fetch": {
        "concurrency": 4,
        "politeness_ms": 1000,
        "user_agent": "irb-forge/0.1 (benchmark builder)",
        "timeout": 20.0,
        "refetch_failures": False,
    },
    "ingest": {"tagger": "rule", "strict": False},
    "qgen": {"coverage_threshold": 0.8},
    "bench": {"sample_size": None, "seed": None},
    "retrieval": {"retriever": "bm25", "reranker": "none", "k1": 1.2, "b": 0.75, "top_m": 100},
    "eval": {"k": 5, "current_date": None, "modes": list(MODES)},
    "llm": {"default": {}, "stages": {}, "judges": []},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and base[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where}{key!r} must be a mapping")
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def _date(value: Any, name: str) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    try:
        return dt.date.fromisoformat(str(value))
    except ValueError as exc:
        raise ConfigError(f"{name}: invalid date {value!r}") from exc


def _plain(obj: Any) -> Any:
    """YAML dates to ISO strings so the snapshot is JSON-serializable."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_plain(v) for v in obj]
    if isinstance(obj, (dt.date, dt.datetime)):
        return obj.isoformat()[:10]
    return obj


@dataclass
class PipelineConfig:
    raw: dict
    base_dir: Path

    # --- construction ------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        cfg = cls(_plain(_merge(DEFAULTS, data, "")), Path(base_dir).resolve())
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "PipelineConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        cfg = cls.from_dict(data, path.parent)
        if overrides:
            cfg = cfg.with_overrides(overrides)
        return cfg

    def with_overrides(self, overrides: dict) -> "PipelineConfig":
        """Apply dotted-key overrides such as ``{"eval.k": 10}``; None values are ignored."""
        data = copy.deepcopy(self.raw)
        for dotted, value in overrides.items():
            if value is None:
                continue
            *parents, leaf = dotted.split(".")
            node = data
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown override {dotted!r}")
            node[leaf] = value
        cfg = PipelineConfig(_plain(data), self.base_dir)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        r = self.raw
        if r["reference_date"] is None:
            raise ConfigError("reference_date is required")
        _date(r["reference_date"], "reference_date")
        if r["eval"]["current_date"] is not None:
            _date(r["eval"]["current_date"], "eval.current_date")
        if not isinstance(r["seed"], int):
            raise ConfigError("seed must be an integer")
        if not 0.0 <= float(r["qgen"]["coverage_threshold"]) <= 1.0:
            raise ConfigError("qgen.coverage_threshold must be in [0, 1]")
        if int(r["eval"]["k"]) < 1:
            raise ConfigError("eval.k must be positive")
        bad_modes = set(r["eval"]["modes"]) - set(MODES)
        if bad_modes:
            raise ConfigError(f"unknown eval modes {sorted(bad_modes)}")
        unknown_stages = set(r["llm"]["stages"]) - set(LLM_STAGES)
        if unknown_stages:
            raise ConfigError(f"unknown llm stages {sorted(unknown_stages)}; expected {LLM_STAGES}")
        if len(r["llm"]["judges"]) != JUDGE_COUNT:
            raise ConfigError(f"llm.judges must list exactly {JUDGE_COUNT} judge models")
        for stage in LLM_STAGES:
            self.provider(stage)
        for i in range(JUDGE_COUNT):
            self.judge(i)
        if int(r["fetch"]["concurrency"]) < 1:
            raise ConfigError("fetch.concurrency must be >= 1")
        if r["paths"]["articles"] is None or r["paths"]["work_dir"] is None:
            raise ConfigError("paths.articles and paths.work_dir are required")

    # --- accessors ---------------------------------------------------------

    def section(self, name: str) -> dict:
        return self.raw[name]

    @property
    def reference_date(self) -> dt.date:
        return _date(self.raw["reference_date"], "reference_date")

    @property
    def current_date(self) -> dt.date:
        value = self.raw["eval"]["current_date"]
        return _date(value, "eval.current_date") if value is not None else self.reference_date

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def bench_seed(self) -> int:
        value = self.raw["bench"]["seed"]
        return self.seed if value is None else int(value)

    def path(self, name: str) -> Path | None:
        value = self.raw["paths"][name]
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def work_dir(self) -> Path:
        return self.path("work_dir")  # type: ignore[return-value]

    def provider(self, stage: str) -> ProviderConfig:
        llm = self.raw["llm"]
        try:
            return ProviderConfig.from_dict({**llm["default"], **llm["stages"].get(stage, {})})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"llm config for {stage}: {exc}") from exc

    def judge(self, index: int) -> ProviderConfig:
        try:
            return ProviderConfig.from_dict({**self.raw["llm"]["default"], **self.raw["llm"]["judges"][index]})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"llm judge {index}: {exc}") from exc

    # --- snapshot ----------------------------------------------------------

    def snapshot_dict(self) -> dict:
        """Effective config as written (relative paths kept); the work dir is a location, not content."""
        data = copy.deepcopy(self.raw)
        data["paths"].pop("work_dir", None)
        return data

    def snapshot(self) -> str:
        return json.dumps(self.snapshot_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"

    def stage_view(self, *sections: str) -> dict:
        """The config sections a stage depends on, for input hashing."""
        out: dict[str, Any] = {}
        for s in sections:
            head, _, tail = s.partition(".")
            out[s] = self.raw[head][tail] if tail else self.raw[head]
        return out
