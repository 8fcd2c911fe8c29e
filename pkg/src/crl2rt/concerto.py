"""Time interleaving, Lipschitz monitoring and the rule-based policy composer.

The composer works on flat float64 parameter vectors. A gradient descent
segment (GDS) spans control steps ``k = 0..L`` inclusive; up to ``N``
segments form a dynamic descent phase (DDP) that shares one anchor weight
vector and one best discounted-cost benchmark.
"""

from __future__ import annotations

import enum
import json
import math
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

__all__ = [
    "Accumulator",
    "Branch",
    "ComposerConfig",
    "ComposerLog",
    "ConvergenceReport",
    "DdpRecord",
    "GdsRecord",
    "Mode",
    "SafetyMonitor",
    "accumulate",
    "compose",
    "convergence_diagnostics",
    "fit_gds",
    "monitor_pair",
    "required_pc",
    "select_mode",
]


class Mode(enum.IntEnum):
    CLASSICAL = 1
    LEARNED = 2


def select_mode(k: int) -> Mode:
    if k < 0:
        raise ValueError("step index must be non-negative")
    return Mode.CLASSICAL if k % 2 == 0 else Mode.LEARNED


@dataclass(frozen=True)
class SafetyMonitor:
    pc_class: float = 0.0
    pe_rl_max: float = -math.inf
    delta_er_max: float = math.inf
    pairs: int = 0
    violations: int = 0

    @property
    def lambda_lipschitz(self) -> float:
        return (-self.pc_class + self.pe_rl_max) / 2.0


def monitor_pair(er_t: float, er_mid: float, er_t2: float, monitor: SafetyMonitor, dt_star: float):
    """Check one classical/learned step pair against the Lipschitz bound.

    ``er_t``, ``er_mid`` and ``er_t2`` are the scalar error magnitudes at
    ``t``, ``t + dt`` and ``t + 2*dt`` with ``dt_star = 2*dt``. The error
    growth rate of the learned half-step updates the running maximum before
    the bound is evaluated. Returns ``(violated, delta_er, monitor')``.
    """
    dt = dt_star / 2.0
    pe_rl = (er_mid - er_t) / dt
    pe_max = max(monitor.pe_rl_max, pe_rl)
    updated = replace(monitor, pe_rl_max=pe_max, pairs=monitor.pairs + 1)
    delta_er = er_t2 - er_t
    violated = delta_er >= updated.lambda_lipschitz * dt_star
    if violated:
        updated = replace(updated, violations=updated.violations + 1)
    return violated, delta_er, updated


def required_pc(pe_rl_max: float, delta_er_max: float, dt: float) -> float:
    """Smallest classical error-reduction rate keeping pair growth below ``delta_er_max``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return pe_rl_max - delta_er_max / dt


def fit_gds(q_series: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares line ``q_k ~ a*k + b`` and the RMS residual ``c``."""
    q = np.asarray(q_series, dtype=np.float64)
    n = q.size
    if n < 2:
        raise ValueError("need at least two samples to fit a segment")
    k = np.arange(n, dtype=np.float64)
    k_mean = k.mean()
    q_mean = q.mean()
    dk = k - k_mean
    a = float(np.dot(dk, q - q_mean) / np.dot(dk, dk))
    b = float(q_mean - a * k_mean)
    resid = q - (a * k + b)
    c = float(np.sqrt(np.mean(resid * resid)))
    return a, b, c


@dataclass(frozen=True)
class GdsRecord:
    j: int
    a: float
    b: float
    c: float
    delta_theta: np.ndarray | None
    qbar: float


@dataclass(frozen=True)
class ComposerConfig:
    L: int = 500
    N: int = 8
    beta: float = 0.5
    noise_sigmas: tuple[float, float, float] = (0.064, 0.04, 0.2)
    noise_floor: float = 1e-3
    cost_semantics: bool = True

    def __post_init__(self) -> None:
        if self.L < 2:
            raise ValueError("L must be >= 2")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")


@dataclass(frozen=True)
class DdpRecord:
    g: int
    theta_g0: np.ndarray
    best_qbar: float
    m_g: float = 0.0


class Branch(enum.Enum):
    IMPROVED = "accept_all_improved"
    TIMEOUT = "reset_to_anchor"
    EXPECTED = "accept_all"
    PARTIAL = "partial_with_noise"
    SLOWING = "reject_with_noise"
    FAILED = "anchor_with_noise"


def _noise(rng: np.random.Generator, sigma: float, theta: np.ndarray, floor: float) -> np.ndarray:
    return rng.standard_normal(theta.shape) * (sigma * np.abs(theta) + sigma * floor)


def _improved(cur: float, best: float, cost_semantics: bool) -> bool:
    if math.isinf(best):
        return True
    return cur < best if cost_semantics else cur > best


def compose(
    theta_j: np.ndarray,
    delta_theta: np.ndarray,
    prev: GdsRecord | None,
    cur: GdsRecord,
    ddp: DdpRecord,
    cfg: ComposerConfig,
    rng: np.random.Generator,
    j: int,
):
    """One composer decision at the end of a segment.

    ``theta_j`` holds the weights at the start of the segment and
    ``delta_theta`` the gradient steps accumulated over it; ``j`` counts the
    segments completed in the current phase. Returns
    ``(theta_next, ddp', j', branch)``.
    """
    theta_j = np.asarray(theta_j, dtype=np.float64)
    delta_theta = np.asarray(delta_theta, dtype=np.float64)
    if _improved(cur.qbar, ddp.best_qbar, cfg.cost_semantics):
        theta_next = theta_j + delta_theta
        new_ddp = DdpRecord(ddp.g + 1, theta_next.copy(), cur.qbar, ddp.m_g)
        return theta_next, new_ddp, 0, Branch.IMPROVED
    if j > cfg.N:
        new_ddp = DdpRecord(ddp.g + 1, ddp.theta_g0.copy(), ddp.best_qbar, ddp.m_g)
        return ddp.theta_g0.copy(), new_ddp, 0, Branch.TIMEOUT
    j += 1
    s_partial, s_slow, s_fail = cfg.noise_sigmas
    a_prev = prev.a if prev is not None else math.inf
    c_prev = prev.c if prev is not None else math.inf
    if a_prev < cur.a:
        if c_prev < cur.c:
            return theta_j + delta_theta, ddp, j, Branch.EXPECTED
        theta_next = theta_j + cfg.beta * delta_theta + _noise(rng, s_partial, theta_j, cfg.noise_floor)
        return theta_next, ddp, j, Branch.PARTIAL
    if c_prev < cur.c:
        return theta_j + _noise(rng, s_slow, theta_j, cfg.noise_floor), ddp, j, Branch.SLOWING
    anchor = ddp.theta_g0
    return anchor + _noise(rng, s_fail, anchor, cfg.noise_floor), ddp, j, Branch.FAILED


def accumulate(stream: Iterable[np.ndarray], L: int, N: int):
    """Segment sums (``L + 1`` steps each) and phase sums (``N + 1`` segments each).

    Returns ``(segment_sums, phase_sums)``; a trailing partial segment or
    phase is included.
    """
    acc = Accumulator(L, N)
    segments: list[np.ndarray] = []
    phases: list[np.ndarray] = []
    for delta in stream:
        closed = acc.add(delta)
        if closed is not None:
            segments.append(closed)
            if acc.segments_in_phase == N + 1:
                phases.append(acc.close_phase())
    if acc.steps_in_segment:
        segments.append(acc.close_segment())
    if acc.segments_in_phase:
        phases.append(acc.close_phase())
    return segments, phases


class Accumulator:
    """Running sums of per-step parameter deltas at segment and phase level."""

    def __init__(self, L: int, N: int):
        self.L = L
        self.N = N
        self.segment: np.ndarray | None = None
        self.phase: np.ndarray | None = None
        self.steps_in_segment = 0
        self.segments_in_phase = 0

    def add(self, delta) -> np.ndarray | None:
        delta = np.asarray(delta, dtype=np.float64)
        self.segment = delta.copy() if self.segment is None else self.segment + delta
        self.steps_in_segment += 1
        if self.steps_in_segment == self.L + 1:
            return self.close_segment()
        return None

    def close_segment(self) -> np.ndarray:
        seg = self.segment if self.segment is not None else np.zeros(0)
        self.phase = seg.copy() if self.phase is None else self.phase + seg
        self.segment = None
        self.steps_in_segment = 0
        self.segments_in_phase += 1
        return seg

    def close_phase(self) -> np.ndarray:
        phase = self.phase if self.phase is not None else np.zeros(0)
        self.phase = None
        self.segments_in_phase = 0
        return phase


@dataclass(frozen=True)
class ConvergenceReport:
    qbar: tuple[float, ...]
    m: tuple[float, ...]
    cumulative: tuple[float, ...]
    accelerating: bool
    diverging: bool
    c: float
    alpha: float

    def to_dict(self) -> dict:
        return asdict(self)


def convergence_diagnostics(qbar_history: Sequence[float], tol: float = 1e-12) -> ConvergenceReport | None:
    """Per-phase acceleration factors and a finite-time decay fit.

    ``m_g = Qbar_{g-1} / Qbar_g - 1`` so a halving cost gives ``m_g = 1``.
    The decay law ``dQ/dg = -c * Q**alpha`` is fitted in log space over the
    phases where the cost fell. Returns ``None`` for fewer than two phases.
    """
    q = np.asarray(qbar_history, dtype=np.float64)
    if q.size < 2:
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(q[1:] != 0, q[:-1] / q[1:] - 1.0, np.inf)
    cumulative = np.cumprod(1.0 + m)
    accelerating = bool(np.all(m > tol))
    diverging = bool(np.all(m < -tol))
    drop = q[:-1] - q[1:]
    mask = (drop > 0) & (q[:-1] > 0)
    c, alpha = math.nan, math.nan
    if np.count_nonzero(mask) >= 2:
        x = np.log(q[:-1][mask])
        y = np.log(drop[mask])
        if np.ptp(x) > 0:
            alpha, logc = np.polyfit(x, y, 1)
            c = float(np.exp(logc))
            alpha = float(alpha)
    elif np.count_nonzero(mask) == 1:
        alpha = 1.0
        c = float(drop[mask][0] / q[:-1][mask][0])
    return ConvergenceReport(
        tuple(float(v) for v in q),
        tuple(float(v) for v in m),
        tuple(float(v) for v in cumulative),
        accelerating,
        diverging,
        c,
        alpha,
    )


class ComposerLog:
    """JSON-lines sink for composer decisions."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self._path = Path(path) if path is not None else None
        self._fh = open(self._path, "w") if self._path is not None else None

    def write(self, g: int, j: int, branch: Branch, rec: GdsRecord, noise_seed: int | None) -> None:
        entry = {
            "g": g,
            "j": j,
            "branch": branch.value,
            "qbar": rec.qbar,
            "a": rec.a,
            "b": rec.b,
            "c": rec.c,
            "noise_seed": noise_seed,
        }
        self.records.append(entry)
        if self._fh is not None:
            self._fh.write(json.dumps(entry) + "\n")

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
