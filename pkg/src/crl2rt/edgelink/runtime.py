"""The per-step edge algorithm shared by in-process and networked runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..classical import TicpConfig
from ..concerto import Mode, select_mode
from ..cpg import CommandSchedule
from ..harness.state import PREV_ACTION, StateBuilder
from ..plant import CONTROL_PERIOD, check_safety
from ..rl_core import RewardSpec, Source, Transition, reward
from .codec import BufferPacket, encode_buffer_packet
from .policy import EdgePolicy, WeightReceiver
from .timing import BUFFER, CLASSICAL, INFERENCE, SHARED, WEIGHTS, TimingRecorder

__all__ = ["EdgeConfig", "EdgeRuntime", "EdgeStep"]


@dataclass(frozen=True)
class EdgeConfig:
    interleave: bool = True
    const_motor: float = 0.2
    dt: float = CONTROL_PERIOD
    ship_batch: int = 16
    ticp_epsilon: float = 0.05
    ticp_period: int = 501
    explore_sigma: float = 0.0
    explore_seed: int = 0
    residual: bool = True
    reward: RewardSpec = RewardSpec()


@dataclass
class EdgeStep:
    k: int
    torque: np.ndarray
    errors: np.ndarray
    reward: float
    mode: int
    source: int
    safe: bool
    amp: float
    generation: int


class EdgeRuntime:
    """Runs one control step: command, state, mode-selected action, transition.

    ``ship`` receives encoded buffer packets; it must not block.
    """

    def __init__(
        self,
        cfg: EdgeConfig,
        schedule: CommandSchedule,
        controller,
        policy: EdgePolicy | None = None,
        ship=None,
        recorder: TimingRecorder | None = None,
    ):
        self.cfg = cfg
        self.schedule = schedule
        self.controller = controller
        self.policy = policy
        self.receiver = WeightReceiver(policy) if policy is not None else None
        self.ship = ship
        self.recorder = recorder
        self.builder = StateBuilder()
        if policy is not None:
            policy.check_input(self.builder.buffer)
        self._prev_action = np.zeros(4)
        self._prev_state: np.ndarray | None = None
        self._prev_source = Source.CLASSICAL
        self._pending: list[Transition] = []
        self._ticp_segment = -1
        self.transitions_shipped = 0
        self._explore_rng = np.random.default_rng(np.random.SeedSequence([cfg.explore_seed, 0xE1]))

    @property
    def learning(self) -> bool:
        return self.cfg.interleave and self.policy is not None

    def _lap(self, stage: str) -> None:
        if self.recorder is not None:
            self.recorder.lap(stage)

    def _update_ticp(self, k: int) -> None:
        seg = k // self.cfg.ticp_period
        if seg != self._ticp_segment:
            self._ticp_segment = seg
            if self.cfg.ticp_epsilon:
                self.controller.perturb(TicpConfig(self.cfg.ticp_epsilon, 1 if seg % 2 == 0 else -1))

    def step(self, k: int, t: float, phi: np.ndarray) -> EdgeStep:
        cfg = self.cfg
        learning = self.learning
        if learning:
            window = self.schedule.window(t, cfg.dt)
            desired = window[0]
        else:
            desired = self.schedule.desired(t)
        errors = desired - phi
        verdict = check_safety(phi, desired)
        cost = reward(errors, cfg.reward)
        amp = float(self.schedule.amplitudes(t).sum()) * 0.25
        if learning:
            self.builder.push(phi, self._prev_action)
            state = self.builder.state(window)
        self._lap(SHARED)

        mode = select_mode(k) if cfg.interleave else Mode.CLASSICAL
        if mode == Mode.CLASSICAL:
            if self.receiver is not None:
                self.receiver.service(mode)
            self._lap(WEIGHTS)
            if learning:
                self._update_ticp(k)
            dt_c = 2.0 * cfg.dt if cfg.interleave else cfg.dt
            torque = np.asarray(self.controller(desired, phi, dt_c), dtype=np.float64)
            action = np.clip(torque / cfg.const_motor, -1.0, 1.0)
            source = Source.CLASSICAL
            self._lap(CLASSICAL)
        else:
            action = self.policy.infer(state).astype(np.float64)
            if cfg.residual:
                action = np.clip(action + state[PREV_ACTION], -1.0, 1.0)
            if cfg.explore_sigma:
                action = np.clip(action + cfg.explore_sigma * self._explore_rng.standard_normal(4), -1.0, 1.0)
            source = Source.RL
            self._lap(INFERENCE)

        if learning:
            snapshot = state.copy()
            if self._prev_state is not None:
                self._pending.append(
                    Transition(
                        self._prev_state,
                        self._prev_action.astype(np.float32),
                        cost,
                        snapshot,
                        action.astype(np.float32),
                        self._prev_source,
                    )
                )
            self._prev_state = snapshot
            self._prev_source = source
            self._lap(SHARED)
            if len(self._pending) >= cfg.ship_batch and self.ship is not None:
                self.ship(encode_buffer_packet(BufferPacket(k, self._pending)))
                self.transitions_shipped += len(self._pending)
                self._pending = []
            self._lap(BUFFER)
        self._prev_action = action
        gen = self.policy.last_generation if (self.policy is not None and source == Source.RL) else 0
        return EdgeStep(k, action * cfg.const_motor, errors, cost, int(mode), int(source), verdict.ok, amp, gen)
