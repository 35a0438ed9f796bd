"""Agent-serving inference toolkit: suffix-automaton speculation, prefix-cached
KV pool, cache-aware scheduling, dual-model escalation, memory compression,
and a discrete-event simulator that ties them together."""

from .kvcache import BlockPool, ContractViolation
from .sam import CompositeDraftSource, SuffixAutomaton
from .sched import Scheduler

__version__ = "0.1.0"

__all__ = ["BlockPool", "CompositeDraftSource", "ContractViolation", "Scheduler", "SuffixAutomaton", "__version__"]
