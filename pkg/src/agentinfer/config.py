"""Scenario configuration: YAML documents mapped onto nested dataclasses.

Every section is a dataclass whose defaults are the documented defaults.
Loading rejects unknown keys and wrong types, and validation errors carry
the dotted path of the offending field (``pool.N``).
"""

from __future__ import annotations

import dataclasses
import re
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .collab import CollabConfig, Mode
from .compress import CompressConfig
from .sched import POLICIES, SchedulerParams
from .sim.engine import BUILD_MODES, NONE, EngineConfig, SpecSettings
from .sim.latency import LatencyModel, ToolLatency
from .sim.workload import WorkloadConfig
from .specdec import SpecConfig

SCENARIOS = ("single", "sched_compare", "sam_async", "ote_sweep", "collab", "compress", "composite")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class PoolSection:
    N: int = 8192
    tpb: int = 16

    def __post_init__(self) -> None:
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.tpb < 1:
            raise ValueError("tpb must be >= 1")


@dataclass
class EngineSection:
    max_batch: int = 8
    prefill_chunk: int = 8192
    small_cost: float = 0.35
    small_N: int | None = None

    def __post_init__(self) -> None:
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.prefill_chunk < 1:
            raise ValueError("prefill_chunk must be >= 1")
        if self.small_cost <= 0:
            raise ValueError("small_cost must be positive")
        if self.small_N is not None and self.small_N < 1:
            raise ValueError("small_N must be >= 1")


@dataclass
class SchedSection:
    policy: str = "agentsched"
    lambda_max: float = 2.0
    k: float = 4.0
    epsilon: float = 1.0
    a: float = 1.0
    b: float = 0.5
    c: float = 0.05
    pi_enabled: bool = False
    k_p: float = 0.0
    k_i: float = 0.0

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        self.params(16)

    def params(self, tpb: int) -> SchedulerParams:
        return SchedulerParams(
            lambda_max=self.lambda_max, k=self.k, epsilon=self.epsilon, a=self.a, b=self.b, c=self.c,
            tpb=tpb, k_p=self.k_p, k_i=self.k_i, pi_enabled=self.pi_enabled,
        )


@dataclass
class SpecSection:
    build: str = NONE
    use_memory: bool = True
    n_propose: int = 4
    top_k: int = 3
    max_context_len: int = 32000
    max_batch_size: int = 8
    min_match: int = 2
    session_weight: float = 1.0
    max_states: int | None = None

    def __post_init__(self) -> None:
        if self.build not in BUILD_MODES:
            raise ValueError(f"build must be one of {BUILD_MODES}")
        self.spec_config()

    def spec_config(self) -> SpecConfig:
        return SpecConfig(
            n_propose=self.n_propose, top_k=self.top_k, max_context_len=self.max_context_len,
            max_batch_size=self.max_batch_size, min_match=self.min_match,
            session_weight=self.session_weight, max_states=self.max_states,
        )

    def settings(self) -> SpecSettings:
        return SpecSettings(self.build, self.spec_config(), self.use_memory)


@dataclass
class CollabSection:
    enabled: bool = False
    K_L: int = 2
    B_L: int = 2
    max_total_steps: int = 64
    malformed_rate: float = 0.0
    solo_model: str = "LARGE"

    def __post_init__(self) -> None:
        if self.solo_model not in (Mode.LARGE.value, Mode.SMALL.value):
            raise ValueError("solo_model must be LARGE or SMALL")
        if not 0.0 <= self.malformed_rate <= 1.0:
            raise ValueError("malformed_rate must lie in [0, 1]")
        self.collab_config()

    def collab_config(self) -> CollabConfig:
        return CollabConfig(K_L=self.K_L, B_L=self.B_L, max_total_steps=self.max_total_steps)


@dataclass
class CompressSection:
    enabled: bool = False
    search_filter: bool = True
    theta_ctx: int = 5000
    theta_search: float = 0.3
    ratio: float = 0.5
    distill_latency: float = 20.0

    def __post_init__(self) -> None:
        if self.distill_latency < 0:
            raise ValueError("distill_latency must be non-negative")
        self.compress_config()

    def compress_config(self) -> CompressConfig:
        return CompressConfig(
            theta_ctx=self.theta_ctx, theta_search=self.theta_search, ratio=self.ratio,
            distill_latency=self.distill_latency,
        )


@dataclass
class SweepSection:
    lengths: list[int] = field(default_factory=lambda: [1000, 2000, 4000, 8000, 16000, 32000])
    repeats: int = 4
    output_tokens: int = 256
    memory_sessions: int = 6
    memory_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if not self.lengths or any(n < 1 for n in self.lengths):
            raise ValueError("lengths must be a non-empty list of positive ints")
        if self.repeats < 1 or self.output_tokens < 1 or self.memory_sessions < 0:
            raise ValueError("repeats, output_tokens must be >= 1 and memory_sessions >= 0")


@dataclass
class OutputSection:
    dir: str | None = None
    stem: str | None = None


@dataclass
class ScenarioConfig:
    scenario: str = "single"
    seed: int = 0
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    pool: PoolSection = field(default_factory=PoolSection)
    engine: EngineSection = field(default_factory=EngineSection)
    sched: SchedSection = field(default_factory=SchedSection)
    spec: SpecSection = field(default_factory=SpecSection)
    collab: CollabSection = field(default_factory=CollabSection)
    compress: CompressSection = field(default_factory=CompressSection)
    latency: LatencyModel = field(default_factory=LatencyModel)
    sweep: SweepSection = field(default_factory=SweepSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if not self.seeds:
            raise ValueError("seeds must not be empty")

    def engine_config(self, small: bool = False) -> EngineConfig:
        n = self.engine.small_N if small and self.engine.small_N is not None else self.pool.N
        return EngineConfig(
            max_batch=self.engine.max_batch, prefill_chunk=self.engine.prefill_chunk,
            total_blocks=n, tokens_per_block=self.pool.tpb,
        )

    def replace(self, **sections: Any) -> ScenarioConfig:
        """Copy with some fields of some sections changed: ``replace(sched={"policy": "fcfs"})``."""
        data = to_dict(self)
        for sec, val in sections.items():
            if isinstance(val, dict):
                data[sec].update(val)
            else:
                data[sec] = val
        return from_dict(data)


# -- generic (de)serialisation -------------------------------------------------


def _hints(cls: type) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _describe(tp: Any) -> str:
    return getattr(tp, "__name__", None) or str(tp).replace("typing.", "")


def _coerce(value: Any, tp: Any, path: str) -> Any:
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], path)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {value!r}")
        return _build(tp, value, path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(path, f"expected a list, got {value!r}")
        return [_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(path, f"expected a mapping, got {value!r}")
        return {str(k): _coerce(v, args[1], f"{path}.{k}") for k, v in value.items()}
    if tp is bool:
        if isinstance(value, bool):
            return value
    elif tp is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
    elif tp is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif tp is str:
        if isinstance(value, str):
            return value
    else:
        return value
    raise ConfigError(path, f"expected {_describe(tp)}, got {value!r}")


def _build(cls: type, data: dict[str, Any], path: str) -> Any:
    hints = _hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    unknown = sorted(set(data) - set(names))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, f"unknown key (known: {', '.join(names)})")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(_blame(path, names, str(exc)), str(exc)) from None


def _blame(path: str, names: list[str], message: str) -> str:
    """Dotted path of the first field named in a validation message."""
    hits = [(m.start(), n) for n in names for m in [re.search(rf"\b{re.escape(n)}\b", message)] if m]
    if not hits:
        return path
    field_name = min(hits)[1]
    return f"{path}.{field_name}" if path else field_name


def from_dict(data: dict[str, Any] | None) -> ScenarioConfig:
    return _build(ScenarioConfig, data or {}, "")


def to_dict(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [to_dict(v) for v in obj]
    return obj


def parse_override(text: str) -> tuple[list[str], Any]:
    """``a.b=value`` -> (["a", "b"], parsed value); values are read as YAML scalars."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(key, "empty path component")
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(key, f"cannot parse value {raw!r}: {exc}") from None
    return parts, value


def apply_overrides(data: dict[str, Any], overrides: list[str]) -> dict[str, Any]:
    for text in overrides:
        parts, value = parse_override(text)
        node = data
        for i, p in enumerate(parts[:-1]):
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(".".join(parts[: i + 1]), "not a section")
            node = nxt
        node[parts[-1]] = value
    return data


def load(path: str | Path | None, overrides: list[str] = (), seed: int | None = None) -> ScenarioConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc.strerror}") from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("", f"invalid YAML in {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("", "config document must be a mapping")
    data = apply_overrides(data, list(overrides))
    if seed is not None:
        data["seed"] = seed
    return from_dict(data)


def describe_keys() -> list[tuple[str, Any]]:
    """Every config key with its default, as dotted paths."""
    out: list[tuple[str, Any]] = []

    def walk(obj: Any, prefix: str) -> None:
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            key = f"{prefix}{f.name}"
            if dataclasses.is_dataclass(v):
                walk(v, key + ".")
            elif isinstance(v, dict) and v and all(dataclasses.is_dataclass(x) for x in v.values()):
                for name, sub in v.items():
                    walk(sub, f"{key}.{name}.")
            else:
                out.append((key, v))

    walk(ScenarioConfig(), "")
    return out


__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "SCENARIOS",
    "ToolLatency",
    "apply_overrides",
    "describe_keys",
    "from_dict",
    "load",
    "parse_override",
    "to_dict",
]
