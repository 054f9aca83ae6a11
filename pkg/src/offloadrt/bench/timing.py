"""The measurement protocol: 11 iterations, the first is warm-up and is
discarded, the reported figure is the mean of the rest."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

from ..errors import BadArgsError

WALL_UNITS_PER_MS = 0.001  # time.perf_counter seconds
VIRTUAL_UNITS_PER_MS = 1000.0  # sim clock microseconds


@dataclass(frozen=True)
class TimingProtocol:
    iterations: int = 11
    discard: int = 1

    def __post_init__(self):
        if self.iterations < 1 or not 0 <= self.discard < self.iterations:
            raise BadArgsError("timing protocol must retain at least one iteration")


def measure(
    workload: Callable[[], object],
    protocol: TimingProtocol = TimingProtocol(),
    timer: Callable[[], float] = time.perf_counter,
    units_per_ms: float = WALL_UNITS_PER_MS,
) -> float:
    """Run the workload protocol.iterations times and return the mean of the
    retained iterations in milliseconds. The timer may be any monotonic
    callable; units_per_ms converts its deltas."""
    samples = []
    for _ in range(protocol.iterations):
        start = timer()
        workload()
        samples.append(timer() - start)
    retained = samples[protocol.discard :]
    return sum(retained) / len(retained) / units_per_ms
