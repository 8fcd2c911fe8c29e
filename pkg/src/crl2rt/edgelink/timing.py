"""Per-step stage timing with a Table-7 style breakdown."""

from __future__ import annotations

import csv
import time
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "REFERENCE_POINTS",
    "SLOWEST_LABEL",
    "STAGES",
    "TOTAL_LABEL",
    "StageSummary",
    "TimingRecorder",
    "TimingSummary",
    "summarize",
    "write_timing_csv",
]

STAGES = (
    "Sensor Data Unpacking",
    "Shared Section",
    "Reception, Analysis, and Loading of Weight",
    "Classical Control",
    "Neural Network Inference",
    "Transmission of Memory Buffer",
    "Transmission of Action",
)
SENSOR, SHARED, WEIGHTS, CLASSICAL, INFERENCE, BUFFER, ACTION = STAGES

TOTAL_LABEL = "Total Algorithm Execution Time/s"
SLOWEST_LABEL = "Slowest Control Frequency /Hz"

# Published figures kept only for side-by-side printing.
REFERENCE_POINTS = {
    "total_min_s": 1.69e-5,
    "total_max_s": 4.78e-5,
    "slowest_hz": 2534.21,
    "naive_total_s": 8.43e-4,
    "framework_adjusted_s": 5.14e-4,
    "packing_s": 5.47e-5,
}


class TimingRecorder:
    """Accumulates stage durations into a preallocated ``(steps, stages)`` table.

    Call :meth:`begin` at the start of a control step, :meth:`lap` after each
    stage and :meth:`commit` at the end. Stages that did not run in a step
    stay at zero for that step.
    """

    def __init__(self, capacity: int, stages: Sequence[str] = STAGES, clock: Callable[[], int] = time.perf_counter_ns):
        self.stages = tuple(stages)
        self._index = {s: i for i, s in enumerate(self.stages)}
        self.clock = clock
        self.table = np.zeros((capacity, len(self.stages)), np.float64)
        self.totals = np.zeros(capacity, np.float64)
        self.count = 0
        self._start = 0
        self._last = 0

    def begin(self) -> None:
        self._start = self._last = self.clock()

    def lap(self, stage: str) -> None:
        now = self.clock()
        if self.count < len(self.totals):
            self.table[self.count, self._index[stage]] += (now - self._last) * 1e-9
        self._last = now

    def skip(self) -> None:
        """Restart the lap clock without charging the elapsed time to a stage."""
        self._last = self.clock()

    def commit(self) -> None:
        if self.count < len(self.totals):
            self.totals[self.count] = (self._last - self._start) * 1e-9
            self.count += 1

    def add(self, durations: Mapping[str, float]) -> None:
        """Record one step from explicit durations in seconds."""
        if self.count >= len(self.totals):
            return
        total = 0.0
        for stage, d in durations.items():
            self.table[self.count, self._index[stage]] += d
            total += d
        self.totals[self.count] = total
        self.count += 1

    def records(self, discard: int = 0) -> tuple[np.ndarray, np.ndarray]:
        return self.table[discard : self.count], self.totals[discard : self.count]


@dataclass(frozen=True)
class StageSummary:
    label: str
    mean: float
    median: float
    p99: float
    max: float


@dataclass(frozen=True)
class TimingSummary:
    stages: tuple[StageSummary, ...]
    total: StageSummary
    slowest_frequency: float
    steps: int

    def as_rows(self) -> list[list]:
        rows = [[s.label, s.mean, s.median, s.p99, s.max] for s in self.stages]
        rows.append([self.total.label, self.total.mean, self.total.median, self.total.p99, self.total.max])
        rows.append([SLOWEST_LABEL, self.slowest_frequency, "", "", ""])
        return rows

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "slowest_frequency_hz": self.slowest_frequency,
            "total": self.total.__dict__,
            "stages": {s.label: s.__dict__ for s in self.stages},
        }


def _stats(label: str, x: np.ndarray) -> StageSummary:
    if x.size == 0:
        return StageSummary(label, 0.0, 0.0, 0.0, 0.0)
    return StageSummary(
        label, float(x.mean()), float(np.median(x)), float(np.percentile(x, 99)), float(x.max())
    )


def summarize(recorder: TimingRecorder, discard: int = 0) -> TimingSummary:
    table, totals = recorder.records(discard)
    stages = tuple(_stats(label, table[:, i]) for i, label in enumerate(recorder.stages))
    total = _stats(TOTAL_LABEL, totals)
    slowest = 1.0 / total.max if total.max > 0 else float("inf")
    return TimingSummary(stages, total, slowest, int(totals.size))


def write_timing_csv(summary: TimingSummary, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["stage", "mean_s", "median_s", "p99_s", "max_s"])
        w.writerows(summary.as_rows())
