"""Latency constants for the simulated serving stack."""

from __future__ import annotations

import dataclasses
import random
from dataclasses import dataclass, field


@dataclass
class ToolLatency:
    mean: float
    jitter: float = 0.0

    def __post_init__(self) -> None:
        if self.mean < 0 or self.jitter < 0:
            raise ValueError("tool latencies must be non-negative")


def default_tools() -> dict[str, ToolLatency]:
    return {
        "batch_web_search": ToolLatency(3.3, 1.0),
        "url_crawler": ToolLatency(10.37, 3.0),
        "document_qa": ToolLatency(17.55, 5.0),
        "rank": ToolLatency(0.8, 0.2),
    }


@dataclass
class LatencyModel:
    """Seconds charged per unit of work.

    One engine iteration costs ``decode_per_forward_pass`` plus the prefill
    of every uncached prompt token scheduled in it, an attention term per
    cached context token of each decoding sequence, and the verification
    overhead of every drafted token.
    """

    prefill_per_uncached_token: float = 1e-4
    decode_per_forward_pass: float = 0.015
    decode_per_context_token: float = 2e-7
    draft_verify_overhead_per_token: float = 5e-4
    sam_build_per_token: float = 4.5e-5
    sam_check_overhead: float = 0.017
    tools: dict[str, ToolLatency] = field(default_factory=default_tools)

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, float) and v < 0:
                raise ValueError(f"{f.name} must be non-negative")
        self.tools = {k: v if isinstance(v, ToolLatency) else ToolLatency(**v) for k, v in self.tools.items()}

    def tool_time(self, name: str, rng: random.Random) -> float:
        t = self.tools[name]
        return max(0.0, t.mean + rng.uniform(-t.jitter, t.jitter))

    def scaled(self, factor: float) -> LatencyModel:
        """Same stack on a model ``factor`` times as expensive per token."""
        return dataclasses.replace(
            self,
            prefill_per_uncached_token=self.prefill_per_uncached_token * factor,
            decode_per_forward_pass=self.decode_per_forward_pass * factor,
            decode_per_context_token=self.decode_per_context_token * factor,
            draft_verify_overhead_per_token=self.draft_verify_overhead_per_token * factor,
            tools=dict(self.tools),
        )
