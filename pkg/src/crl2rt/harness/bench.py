"""Edge timing benchmark: matrix inference path against a naive reload-every-step path.

Both paths run the same scripted sensor stream through the same per-step
stages, so the ratio of their totals isolates the cost of tensor-style
conversion and per-step weight reloading.
"""

from __future__ import annotations

import gc
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from ..classical import make_controller
from ..cpg import CommandSchedule
from ..edgelink.codec import (
    ActionPacket,
    SensorPacket,
    WeightPacket,
    decode_sensor_packet,
    decode_weight_packet,
    encode_action_packet,
    encode_sensor_packet,
    encode_weight_packet,
)
from ..edgelink.policy import EdgePolicy
from ..edgelink.runtime import EdgeConfig, EdgeRuntime
from ..edgelink.timing import (
    ACTION,
    CLASSICAL,
    INFERENCE,
    REFERENCE_POINTS,
    SENSOR,
    SHARED,
    WEIGHTS,
    TimingRecorder,
    TimingSummary,
    summarize,
)
from ..harness.state import StateBuilder
from ..neural import Network, NetworkSpec, init_xavier
from ..plant import CONTROL_PERIOD

__all__ = ["BenchConfig", "BenchReport", "bench_timing", "scripted_sensor_stream"]


@dataclass(frozen=True)
class BenchConfig:
    steps: int = 6000
    discard: int = 1000
    frequency: float = 40.0
    seed: int = 0
    swap_every: int = 50
    naive: bool = True


@dataclass
class BenchReport:
    matrix: TimingSummary
    naive: TimingSummary | None
    config: BenchConfig

    @property
    def ratio(self) -> float:
        """Naive over matrix median total; the speedup of the matrix path."""
        if self.naive is None:
            return float("nan")
        return self.naive.total.median / self.matrix.total.median

    def to_dict(self) -> dict:
        return {
            "config": self.config.__dict__,
            "matrix": self.matrix.to_dict(),
            "naive": self.naive.to_dict() if self.naive else None,
            "speedup_median": self.ratio,
            "reference_points": dict(REFERENCE_POINTS),
        }

    def text(self) -> str:
        lines = []
        for name, summary in (("matrix path", self.matrix), ("naive path", self.naive)):
            if summary is None:
                continue
            lines.append(f"[{name}] steps={summary.steps}")
            for row in summary.as_rows():
                label, *vals = row
                cells = " ".join(f"{v:>12.3e}" if isinstance(v, float) else f"{v:>12}" for v in vals)
                lines.append(f"  {label:<45} {cells}")
        if self.naive is not None:
            lines.append(f"speedup (naive/matrix median total): {self.ratio:.2f}x")
        ref = REFERENCE_POINTS
        lines.append(
            f"reference: total {ref['total_min_s']:.2e}-{ref['total_max_s']:.2e} s, "
            f"slowest {ref['slowest_hz']} Hz, naive {ref['naive_total_s']:.2e} s"
        )
        return "\n".join(lines)


def scripted_sensor_stream(steps: int, frequency: float, seed: int) -> list[bytes]:
    """Encoded sensor packets following the command with a small lag and noise."""
    schedule = CommandSchedule(frequency, seed=seed)
    rng = np.random.default_rng(seed)
    out = []
    for k in range(steps):
        t = k * CONTROL_PERIOD
        phi = 0.9 * schedule.desired(t - 1e-3) + 0.01 * rng.standard_normal(4)
        out.append(encode_sensor_packet(SensorPacket(k, t, tuple(float(v) for v in phi))))
    return out


def _actor(seed: int) -> Network:
    net = init_xavier(NetworkSpec.actor(), seed)
    net.weights[-1][...] *= 0.1
    return net


def _weight_stream(seed: int, count: int) -> list[bytes]:
    rng = np.random.default_rng(seed + 1)
    base = _actor(seed)
    out = []
    for i in range(count):
        net = base.copy()
        for w in net.weights:
            w += (1e-3 * rng.standard_normal(w.shape)).astype(w.dtype)
        out.append(encode_weight_packet(WeightPacket.from_network(net, i + 2)))
    return out


@contextmanager
def _gc_paused():
    """Keep the cyclic collector out of the timed loop, as a real-time loop would."""
    gc.collect()
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def _run_matrix(cfg: BenchConfig, sensors: list[bytes], packets: list[bytes]) -> TimingSummary:
    schedule = CommandSchedule(cfg.frequency, seed=cfg.seed)
    policy = EdgePolicy.from_network(_actor(cfg.seed))
    shipped = []
    recorder = TimingRecorder(len(sensors))
    edge = EdgeRuntime(
        EdgeConfig(ticp_period=501),
        schedule,
        make_controller("PID", cfg.frequency),
        policy,
        ship=shipped.append,
        recorder=recorder,
    )
    swap = 0
    for k, raw in enumerate(sensors):
        if cfg.swap_every and k % cfg.swap_every == 1:
            # Arrives from the receiver flow between steps; not charged to the loop.
            edge.receiver.receive(packets[swap % len(packets)])
            swap += 1
        recorder.begin()
        pkt = decode_sensor_packet(raw)
        phi = np.array(pkt.phi)
        recorder.lap(SENSOR)
        step = edge.step(k, pkt.t, phi)
        encode_action_packet(ActionPacket(k, step.generation, step.source, tuple(step.torque.tolist())))
        recorder.lap(ACTION)
        recorder.commit()
        if len(shipped) > 64:
            shipped.clear()
    return summarize(recorder, cfg.discard)


def _naive_forward(net_layers, state_list) -> list[float]:
    x = np.array(state_list, dtype=np.float64).reshape(1, -1)
    for w, b in net_layers:
        x = np.tanh(x @ np.array(w).T + np.array(b))
    return [float(v) for v in x.reshape(-1)]


def _run_naive(cfg: BenchConfig, sensors: list[bytes], packets: list[bytes]) -> TimingSummary:
    """Framework-style loop: lists in, full packet decode and copy every step, lists out."""
    schedule = CommandSchedule(cfg.frequency, seed=cfg.seed)
    controller = make_controller("PID", cfg.frequency)
    builder = StateBuilder()
    recorder = TimingRecorder(len(sensors))
    current = encode_weight_packet(WeightPacket.from_network(_actor(cfg.seed), 1))
    prev_action = [0.0] * 4
    swap = 0
    for k, raw in enumerate(sensors):
        if cfg.swap_every and k % cfg.swap_every == 1:
            current = packets[swap % len(packets)]
            swap += 1
        recorder.begin()
        pkt = decode_sensor_packet(raw)
        phi = np.array(pkt.phi)
        recorder.lap(SENSOR)
        desired = schedule.desired(pkt.t)
        builder.push(phi, prev_action)
        state_list = builder.state(schedule.window(pkt.t, CONTROL_PERIOD)).tolist()
        recorder.lap(SHARED)
        wp = decode_weight_packet(current)
        layers = [(w.tolist(), b.tolist()) for w, b in zip(wp.weights, wp.biases)]
        recorder.lap(WEIGHTS)
        if k % 2 == 0:
            torque = controller(desired, phi, 2 * CONTROL_PERIOD)
            action = np.clip(torque / 0.2, -1, 1).tolist()
            recorder.lap(CLASSICAL)
        else:
            action = _naive_forward(layers, state_list)
            recorder.lap(INFERENCE)
        encode_action_packet(ActionPacket(k, 0, k % 2, tuple(0.2 * a for a in action)))
        prev_action = action
        recorder.lap(ACTION)
        recorder.commit()
    return summarize(recorder, cfg.discard)


def bench_timing(cfg: BenchConfig = BenchConfig()) -> BenchReport:
    if cfg.steps <= cfg.discard:
        raise ValueError("steps must exceed the discarded warm-up iterations")
    sensors = scripted_sensor_stream(cfg.steps, cfg.frequency, cfg.seed)
    packets = _weight_stream(cfg.seed, 8)
    with _gc_paused():
        matrix = _run_matrix(cfg, sensors, packets)
    with _gc_paused():
        naive = _run_naive(cfg, sensors, packets) if cfg.naive else None
    return BenchReport(matrix, naive, cfg)

