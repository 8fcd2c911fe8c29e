"""Desired wing trajectories and the operating-condition roster."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "AMPLITUDE_GRID_DEG",
    "DEFAULT_PHASES",
    "FREQUENCIES",
    "CommandSchedule",
    "ConditionSpec",
    "WingCommandSpec",
    "all_conditions",
    "command_window",
    "condition_from_label",
    "desired_angle",
    "desired_angles",
    "make_condition",
    "sample_amplitude",
    "sample_amplitudes",
]

AMPLITUDE_GRID_DEG = np.arange(45.0, 75.0 + 1e-9, 2.5)
NOMINAL_AMPLITUDE_DEG = 60.0
FREQUENCIES = (20.0, 40.0, 60.0)
# Fore/hind antiphase: wings 1 and 4 start at phase 0, wings 2 and 3 at pi.
DEFAULT_PHASES = (0.0, math.pi, math.pi, 0.0)

_GRID_PMF = np.exp(-0.5 * ((AMPLITUDE_GRID_DEG - 60.0) / 10.0) ** 2)
_GRID_PMF /= _GRID_PMF.sum()
_AMP_MIN = math.radians(45.0)
_AMP_MAX = math.radians(75.0)


@dataclass(frozen=True)
class WingCommandSpec:
    amplitude: tuple[float, float, float, float]
    frequency: float
    phase: tuple[float, float, float, float] = DEFAULT_PHASES

    @classmethod
    def uniform(cls, amplitude: float, frequency: float, phase=DEFAULT_PHASES) -> WingCommandSpec:
        return cls((amplitude,) * 4, frequency, tuple(phase))


def desired_angle(spec: WingCommandSpec, t: float, i: int) -> float:
    """Desired flapping angle of wing ``i`` (1-based) at time ``t``."""
    if not 1 <= i <= 4:
        raise ValueError(f"wing index must be in 1..4, got {i}")
    return spec.amplitude[i - 1] * math.sin(2.0 * math.pi * spec.frequency * t + spec.phase[i - 1])


def desired_angles(spec: WingCommandSpec, t: float) -> np.ndarray:
    return np.asarray(spec.amplitude) * np.sin(2.0 * math.pi * spec.frequency * t + np.asarray(spec.phase))


def command_window(spec: WingCommandSpec, t: float, dt: float, horizon: int = 4) -> np.ndarray:
    """Desired angles at ``t, t+dt, ..., t+(horizon-1)*dt`` as a ``(horizon, 4)`` array."""
    times = t + dt * np.arange(horizon)
    return np.asarray(spec.amplitude) * np.sin(
        2.0 * math.pi * spec.frequency * times[:, None] + np.asarray(spec.phase)
    )


def sample_amplitude(rng: np.random.Generator) -> float:
    """Half the time exactly 60 degrees, otherwise a draw from the 2.5-degree grid."""
    if rng.random() < 0.5:
        return math.radians(NOMINAL_AMPLITUDE_DEG)
    return math.radians(float(AMPLITUDE_GRID_DEG[rng.choice(AMPLITUDE_GRID_DEG.size, p=_GRID_PMF)]))


def sample_amplitudes(rng: np.random.Generator, size: int) -> np.ndarray:
    nominal = rng.random(size) < 0.5
    grid = AMPLITUDE_GRID_DEG[rng.choice(AMPLITUDE_GRID_DEG.size, size=size, p=_GRID_PMF)]
    return np.radians(np.where(nominal, NOMINAL_AMPLITUDE_DEG, grid))


@dataclass(frozen=True)
class ConditionSpec:
    frequency: float
    amp_min: float
    amp_max: float
    yaw_enabled: bool
    label: str

    @property
    def load(self) -> int:
        return 2 if self.yaw_enabled else 1


def make_condition(load: int, frequency: float) -> ConditionSpec:
    if load not in (1, 2):
        raise ValueError(f"load must be 1 or 2, got {load}")
    if float(frequency) not in FREQUENCIES:
        raise ValueError(f"frequency must be one of {FREQUENCIES}, got {frequency}")
    return ConditionSpec(
        frequency=float(frequency),
        amp_min=_AMP_MIN,
        amp_max=_AMP_MAX,
        yaw_enabled=load == 2,
        label=f"Load {load}, {int(frequency)} Hz configuration",
    )


def all_conditions() -> tuple[ConditionSpec, ...]:
    return tuple(make_condition(load, f) for load in (1, 2) for f in FREQUENCIES)


def condition_from_label(label: str) -> ConditionSpec:
    """Accepts the full label or the short ``load1-40`` / ``L1-40`` forms."""
    text = label.strip()
    for cond in all_conditions():
        if text == cond.label:
            return cond
    short = text.lower().replace("load", "").replace("l", "").replace("hz", "").replace(" ", "")
    parts = short.replace(",", "-").replace("_", "-").split("-")
    try:
        load, freq = int(parts[0]), float(parts[1])
        return make_condition(load, freq)
    except (IndexError, ValueError):
        raise ValueError(f"unknown condition {label!r}") from None


@dataclass
class CommandSchedule:
    """Per-wing sinusoidal commands whose amplitude is redrawn every cycle.

    A wing's cycle starts where its phase ``2*pi*f*t + phase_i`` crosses a
    multiple of ``2*pi`` (an upward zero crossing), so redraws never cause a
    jump in the commanded angle. Each wing draws from its own stream, so the
    amplitude of cycle ``n`` depends only on the seed, the wing and ``n``.
    """

    frequency: float
    seed: int = 0
    phase: tuple[float, float, float, float] = DEFAULT_PHASES
    randomize: bool = True
    _amps: list[list[float]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._phase = np.asarray(self.phase, dtype=np.float64)
        self._rngs = [np.random.default_rng(s) for s in np.random.SeedSequence(self.seed).spawn(4)]
        self._amps = [[], [], [], []]

    def _amplitude(self, wing: int, cycle: int) -> float:
        if not self.randomize:
            return math.radians(NOMINAL_AMPLITUDE_DEG)
        amps = self._amps[wing]
        cycle = max(cycle, 0)
        while len(amps) <= cycle:
            amps.append(sample_amplitude(self._rngs[wing]))
        return amps[cycle]

    def _row(self, t: float) -> list[float]:
        f = self.frequency
        out = []
        for i, ph in enumerate(self.phase):
            cycle = math.floor(f * t + ph / (2.0 * math.pi))
            out.append(self._amplitude(i, cycle) * math.sin(2.0 * math.pi * f * t + ph))
        return out

    def amplitudes(self, t: float) -> np.ndarray:
        f = self.frequency
        return np.array([self._amplitude(i, math.floor(f * t + ph / (2.0 * math.pi))) for i, ph in enumerate(self.phase)])

    def desired(self, t: float) -> np.ndarray:
        return np.array(self._row(t))

    def window(self, t: float, dt: float, horizon: int = 4) -> np.ndarray:
        return np.array([self._row(t + dt * h) for h in range(horizon)])
