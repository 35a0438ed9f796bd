"""Discrete-event simulation of the agent serving stack."""

from .engine import EngineConfig, LLMRequest, ServingEngine, SpecSettings
from .latency import LatencyModel, ToolLatency
from .oracle import KnowledgeIndex, MockOracle
from .report import CSV_COLUMNS, MetricsReport
from .workload import Workload, WorkloadConfig, classify

__all__ = [
    "CSV_COLUMNS",
    "EngineConfig",
    "KnowledgeIndex",
    "LLMRequest",
    "LatencyModel",
    "MetricsReport",
    "MockOracle",
    "ServingEngine",
    "SpecSettings",
    "ToolLatency",
    "Workload",
    "WorkloadConfig",
    "classify",
]
