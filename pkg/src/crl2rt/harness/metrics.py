"""Per-step metrics log, end-performance metric and comparison arithmetic."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "METRIC_COLUMNS",
    "LipschitzAudit",
    "MetricsLog",
    "compare",
    "last_quarter_error",
    "lipschitz_audit",
]

METRIC_COLUMNS = ("k", "t", "e1", "e2", "e3", "e4", "reward", "mode", "source", "safety", "amp")
_INT_COLUMNS = {"k", "mode", "source", "safety"}


class MetricsLog:
    """Append-only table with one row per control step plus run metadata.

    Errors are commanded minus measured angle in radians; ``amp`` is the
    mean commanded amplitude at that step so errors can be normalised.
    ``source`` uses the transition source codes (0 classical, 1 learned).
    """

    def __init__(self, capacity: int = 0, meta: dict | None = None):
        self._data = np.zeros((max(capacity, 1), len(METRIC_COLUMNS)), np.float64)
        self.n = 0
        self.meta = dict(meta or {})
        self.failed = False
        self.fail_step: int | None = None
        self.fail_reason: str | None = None

    def __len__(self) -> int:
        return self.n

    def append(self, k, t, errors, reward, mode, source, safety, amp) -> None:
        if self.n == len(self._data):
            self._data = np.concatenate([self._data, np.zeros_like(self._data)])
        row = self._data[self.n]
        row[0] = k
        row[1] = t
        row[2:6] = errors
        row[6] = reward
        row[7] = mode
        row[8] = source
        row[9] = safety
        row[10] = amp
        self.n += 1

    def fail(self, step: int, reason: str) -> None:
        self.failed = True
        self.fail_step = step
        self.fail_reason = reason

    @property
    def table(self) -> np.ndarray:
        return self._data[: self.n]

    def column(self, name: str) -> np.ndarray:
        return self.table[:, METRIC_COLUMNS.index(name)]

    @property
    def errors(self) -> np.ndarray:
        return self.table[:, 2:6]

    def status(self) -> dict:
        return {"failed": self.failed, "fail_step": self.fail_step, "fail_reason": self.fail_reason, "steps": self.n}

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(METRIC_COLUMNS)
            for row in self.table:
                w.writerow(
                    [str(int(v)) if c in _INT_COLUMNS else repr(float(v)) for c, v in zip(METRIC_COLUMNS, row)]
                )
        meta = {"meta": self.meta, "status": self.status()}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, default=str))

    @classmethod
    def from_csv(cls, path: str | Path) -> MetricsLog:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in r] for r in reader]
        if tuple(header) != METRIC_COLUMNS:
            raise ValueError(f"unexpected metrics header {header}")
        log = cls(len(rows))
        if rows:
            log._data[: len(rows)] = np.asarray(rows)
        log.n = len(rows)
        meta_path = Path(str(path) + ".meta.json")
        if meta_path.exists():
            blob = json.loads(meta_path.read_text())
            log.meta = blob.get("meta", {})
            st = blob.get("status", {})
            log.failed = bool(st.get("failed", False))
            log.fail_step = st.get("fail_step")
            log.fail_reason = st.get("fail_reason")
        return log


def last_quarter_error(log, normalized: bool = False) -> float:
    """Mean over the final 25% of steps of the per-step mean absolute error.

    Accepts a :class:`MetricsLog` or an array of per-step errors (``(T,)``
    or ``(T, wings)``). With ``normalized=True`` each step's error is divided
    by its commanded amplitude (logs only).
    """
    if isinstance(log, MetricsLog):
        if log.failed:
            raise ValueError(f"run failed at step {log.fail_step}; refusing to summarise it")
        per_step = np.abs(log.errors).mean(axis=1)
        if normalized:
            per_step = per_step / log.column("amp")
    else:
        arr = np.abs(np.asarray(log, dtype=np.float64))
        per_step = arr.mean(axis=1) if arr.ndim == 2 else arr
    n = per_step.shape[0]
    if n == 0:
        raise ValueError("empty log")
    return float(per_step[n - max(n // 4, 1) :].mean())


def compare(baseline: float, crl: float) -> float:
    """Percentage by which ``crl`` is below ``baseline`` (negative when worse)."""
    if not baseline > 0:
        raise ValueError("baseline metric must be positive")
    return 100.0 * (baseline - crl) / baseline


@dataclass(frozen=True)
class LipschitzAudit:
    pairs: int
    violations: int
    pc_class: float
    pe_rl_max: float
    lambda_lipschitz: float
    worst_margin: float
    violation_steps: tuple[int, ...] = field(default=())
    warmup_pairs: int = 0
    warmup_exceedances: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["violation_steps"] = list(self.violation_steps)[:50]
        return d


def lipschitz_audit(log: MetricsLog, dt: float | None = None, gds_length: int = 501) -> LipschitzAudit:
    """Replay the online safety monitor over every learned/classical step pair.

    A pair starts at a learned step ``k``. With ``Er`` the summed absolute
    error, the learned half-step growth rate is ``(Er[k+1]-Er[k])/dt`` and the
    classical reduction rate is ``(Er[k+1]-Er[k+2])/dt``. The growth rate feeds
    a running maximum from the first pair on. The classical capability used
    inside segment ``g`` (``gds_length`` steps) is the mean reduction rate over
    segment ``g-1``, so pairs in the first segment have no capability estimate
    yet: they are counted as warm-up and their bound exceedances are reported
    separately (against a neutral capability of zero) rather than as
    violations.
    """
    er = np.abs(log.errors).sum(axis=1)
    k = log.column("k").astype(int)
    mode = log.column("mode").astype(int)
    if dt is None:
        t = log.column("t")
        dt = float(t[1] - t[0]) if len(t) > 1 else 5e-4
    starts = np.nonzero((mode[:-2] == 2) & (mode[1:-1] == 1))[0]
    if starts.size == 0:
        return LipschitzAudit(0, 0, math.nan, math.nan, math.nan, math.nan)
    pe = (er[starts + 1] - er[starts]) / dt
    pc = (er[starts + 1] - er[starts + 2]) / dt
    pe_max = np.maximum.accumulate(pe)
    seg = k[starts] // gds_length
    pc_class = np.full(starts.size, math.nan)
    current = math.nan
    for g in np.unique(seg):
        in_g = seg == g
        pc_class[in_g] = current
        current = float(pc[in_g].mean())
    lam = (pe_max - pc_class) / 2.0
    margin = lam * 2.0 * dt - (er[starts + 2] - er[starts])
    armed = ~np.isnan(pc_class)
    bad = armed & (margin <= 0)
    warm = ~armed
    # Warm-up pairs are judged against the monitor's neutral capability of zero.
    warm_margin = pe_max * dt - (er[starts + 2] - er[starts])
    last = int(np.nonzero(armed)[0][-1]) if armed.any() else -1
    return LipschitzAudit(
        int(np.count_nonzero(armed)),
        int(np.count_nonzero(bad)),
        float(pc_class[last]) if last >= 0 else math.nan,
        float(pe_max[-1]),
        float(lam[last]) if last >= 0 else math.nan,
        float(margin[armed].min()) if armed.any() else math.nan,
        tuple(int(v) for v in k[starts[bad]]),
        int(np.count_nonzero(warm)),
        int(np.count_nonzero(warm & (warm_margin <= 0))),
    )
