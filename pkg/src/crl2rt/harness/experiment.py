"""Experiment configuration and the deterministic in-process closed loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..classical import make_controller
from ..concerto import ComposerLog
from ..cpg import CommandSchedule, ConditionSpec, condition_from_label, make_condition
from ..edgelink.policy import EdgePolicy
from ..edgelink.runtime import EdgeConfig, EdgeRuntime
from ..edgelink.timing import (
    ACTION,
    SENSOR,
    TimingRecorder,
    TimingSummary,
    summarize,
    write_timing_csv,
)
from ..edgelink.transport import LocalChannel
from ..plant import CONTROL_PERIOD, LoadModelConfig, Plant, PlantState, StepFailure
from .cloud import CloudConfig, CloudTrainer
from .metrics import MetricsLog, last_quarter_error, lipschitz_audit

__all__ = ["ALGORITHMS", "ExperimentConfig", "ExperimentResult", "build_plant", "run_experiment"]

ALGORITHMS = ("PID2000", "APID2000", "MRAC2000", "CRL2RT_PID", "CRL2RT_APID", "CRL2RT_MRAC")


@dataclass(frozen=True)
class ExperimentConfig:
    condition: ConditionSpec = field(default_factory=lambda: make_condition(1, 40))
    algorithm: str = "PID2000"
    seed: int = 0
    total_steps: int = 100_000
    control_rate: float = 2000.0
    out_dir: str | None = None
    const_motor: float = 0.2
    zero_rest_offset: bool = True
    loads: LoadModelConfig = field(default_factory=LoadModelConfig)
    cloud: CloudConfig = field(default_factory=CloudConfig)
    edge: EdgeConfig = field(default_factory=lambda: EdgeConfig(explore_sigma=0.1))
    randomize_amplitude: bool = True
    host: str = "127.0.0.1"
    port: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if not math.isclose(1.0 / self.control_rate, CONTROL_PERIOD):
            raise ValueError("control period must equal the plant event step of 5e-4 s")
        if self.total_steps < 0:
            raise ValueError("total_steps must be non-negative")

    @property
    def learned(self) -> bool:
        return self.algorithm.startswith("CRL2RT")

    @property
    def classical_kind(self) -> str:
        return self.algorithm.split("_")[-1].replace("2000", "")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["condition"] = self.condition.label
        return d

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        """Build from a (possibly partial, nested) dict of overrides."""
        return apply_overrides(cls(), data)


def _merge(obj, data: dict):
    kwargs = {}
    names = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in names:
            raise KeyError(f"unknown config key {key!r} for {type(obj).__name__}")
        current = getattr(obj, key)
        if hasattr(current, "__dataclass_fields__") and isinstance(value, dict):
            kwargs[key] = _merge(current, value)
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return replace(obj, **kwargs)


def apply_overrides(cfg: ExperimentConfig, data: dict) -> ExperimentConfig:
    data = dict(data)
    if "condition" in data and isinstance(data["condition"], str):
        data["condition"] = condition_from_label(data["condition"])
    return _merge(cfg, data)


def build_plant(cfg: ExperimentConfig) -> Plant:
    return Plant.for_condition(
        cfg.condition.frequency,
        cfg.condition.yaw_enabled,
        loads=cfg.loads,
        zero_rest_offset=cfg.zero_rest_offset,
    )


def build_edge(cfg: ExperimentConfig, policy: EdgePolicy | None, ship=None, recorder=None) -> EdgeRuntime:
    schedule = CommandSchedule(cfg.condition.frequency, seed=cfg.seed, randomize=cfg.randomize_amplitude)
    controller = make_controller(cfg.classical_kind, cfg.condition.frequency)
    edge_cfg = replace(
        cfg.edge,
        interleave=cfg.learned,
        const_motor=cfg.const_motor,
        ticp_period=cfg.cloud.composer.L + 1,
        explore_seed=cfg.seed,
    )
    return EdgeRuntime(edge_cfg, schedule, controller, policy, ship=ship, recorder=recorder)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    log: MetricsLog
    cloud: dict | None = None
    composer: list[dict] = field(default_factory=list)
    edge: dict = field(default_factory=dict)
    timing: TimingSummary | None = None

    def summary(self) -> dict:
        out = {
            "algorithm": self.config.algorithm,
            "condition": self.config.condition.label,
            "seed": self.config.seed,
            "steps": len(self.log),
            "status": self.log.status(),
            "edge": self.edge,
            "cloud": self.cloud,
        }
        if len(self.log) and not self.log.failed:
            out["last_quarter_error_rad"] = last_quarter_error(self.log)
            out["last_quarter_error_normalized"] = last_quarter_error(self.log, normalized=True)
            if self.config.learned:
                out["lipschitz"] = lipschitz_audit(self.log, CONTROL_PERIOD).to_dict()
        return out

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.log.to_csv(out / "metrics.csv")
        with open(out / "composer.jsonl", "w") as fh:
            fh.writelines(json.dumps(rec) + "\n" for rec in self.composer)
        (out / "summary.json").write_text(json.dumps(self.summary(), indent=2, default=str))
        if self.timing is not None:
            write_timing_csv(self.timing, out / "timing.csv")
        (out / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, default=str))
        return out


def run_experiment(cfg: ExperimentConfig, progress=None) -> ExperimentResult:
    """Plant, edge and cloud on one thread; identical inputs give identical logs."""
    log = MetricsLog(cfg.total_steps, meta={"config": cfg.to_dict(), "units": "rad"})
    composer_log = ComposerLog()
    cloud = None
    policy = None
    to_cloud = LocalChannel(capacity=1 << 20)
    if cfg.learned:
        cloud = CloudTrainer(cfg.cloud, seed=cfg.seed, composer_log=composer_log)
        policy = EdgePolicy.from_network(cloud.actor)
    recorder = TimingRecorder(cfg.total_steps)
    edge = build_edge(cfg, policy, ship=to_cloud.send, recorder=recorder)
    plant = build_plant(cfg)
    state = PlantState.zeros()
    dt = CONTROL_PERIOD

    for k in range(cfg.total_steps):
        t = k * dt
        recorder.begin()
        phi = state.phi.copy()
        recorder.lap(SENSOR)
        step = edge.step(k, t, phi)
        recorder.lap(ACTION)
        recorder.commit()
        log.append(k, t, step.errors, step.reward, step.mode, step.source, int(not step.safe), step.amp)
        if not step.safe:
            log.fail(k, "safety: tracking error beyond 90 degrees")
            break
        try:
            state = plant.step(PlantState(state.phi, state.phi_dot, state.theta, state.theta_dot, t), step.torque, dt)
        except StepFailure as exc:
            log.fail(k, f"integrator: {exc}")
            break
        if cloud is not None:
            for payload in to_cloud.poll():
                cloud.receive(payload)
            for packet in cloud.take_outbox():
                edge.receiver.receive(packet)
        if progress is not None and k % 10_000 == 0:
            progress(k)

    edge_info = {"transitions_shipped": edge.transitions_shipped}
    if edge.receiver is not None:
        edge_info["receiver"] = dict(edge.receiver.stats.__dict__)
        edge_info["policy_generation"] = edge.policy.generation
    result = ExperimentResult(
        cfg,
        log,
        cloud.diagnostics() if cloud is not None else None,
        composer_log.records,
        edge_info,
        summarize(recorder, min(1000, max(recorder.count - 1, 0))),
    )
    if cfg.out_dir:
        result.write(cfg.out_dir)
    return result
