"""Three-process deployment: plant, edge and cloud talking over loopback TCP.

Each role is started as ``python -m crl2rt.harness.split <role> ...``. The
plant and cloud listen and publish their port through a file; the edge
connects to both. The plant runs in lockstep with the edge (one sensor
packet out, one action packet back). The cloud link is asynchronous: the
edge queues buffer packets without waiting and installs whatever weight
packets have arrived, so losing the cloud only freezes the policy.
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from ..concerto import ComposerLog
from ..edgelink.codec import (
    ActionPacket,
    FrameDecoder,
    SensorPacket,
    decode_action_packet,
    decode_sensor_packet,
    decode_weight_packet,
    encode_action_packet,
    encode_sensor_packet,
    frame,
)
from ..edgelink.policy import EdgePolicy
from ..edgelink.timing import (
    ACTION,
    SENSOR,
    TimingRecorder,
    summarize,
    write_timing_csv,
)
from ..edgelink.transport import TcpChannel, connect, listen
from ..plant import CONTROL_PERIOD, PlantState, StepFailure
from .cloud import CloudTrainer
from .experiment import ExperimentConfig, ExperimentResult, build_edge, build_plant
from .metrics import MetricsLog

__all__ = ["SplitResult", "run_split"]

_WARMUP_DISCARD = 1000


class _Link:
    """Blocking request/response framing for the lockstep plant link."""

    def __init__(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self.decoder = FrameDecoder()
        self.queue: list[bytes] = []

    def send(self, payload: bytes) -> None:
        self.sock.sendall(frame(payload))

    def recv(self) -> bytes | None:
        while not self.queue:
            chunk = self.sock.recv(1 << 16)
            if not chunk:
                return None
            self.queue.extend(self.decoder.feed(chunk))
        return self.queue.pop(0)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def _publish_port(srv: socket.socket, path: str) -> None:
    tmp = path + ".tmp"
    Path(tmp).write_text(str(srv.getsockname()[1]))
    os.replace(tmp, path)


def _load_config(path: str) -> ExperimentConfig:
    return ExperimentConfig.from_dict(json.loads(Path(path).read_text()))


# -- roles -----------------------------------------------------------------


def plant_main(cfg: ExperimentConfig, port_file: str) -> int:
    srv = listen(cfg.host, cfg.port)
    _publish_port(srv, port_file)
    conn, _ = srv.accept()
    srv.close()
    link = _Link(conn)
    plant = build_plant(cfg)
    state = PlantState.zeros()
    dt = CONTROL_PERIOD
    try:
        for k in range(cfg.total_steps):
            t = k * dt
            link.send(encode_sensor_packet(SensorPacket(k, t, tuple(float(v) for v in state.phi))))
            raw = link.recv()
            if raw is None:
                return 0
            act = decode_action_packet(raw)
            torque = np.asarray(act.action, dtype=np.float64)
            try:
                state = plant.step(PlantState(state.phi, state.phi_dot, state.theta, state.theta_dot, t), torque, dt)
            except StepFailure as exc:
                print(f"plant: integrator failure at step {k}: {exc}", file=sys.stderr)
                return 3
    except OSError:
        return 0
    finally:
        link.close()
    return 0


def cloud_main(cfg: ExperimentConfig, port_file: str, out_dir: str) -> int:
    srv = listen(cfg.host, cfg.port)
    _publish_port(srv, port_file)
    conn, _ = srv.accept()
    srv.close()
    log = ComposerLog()
    trainer = CloudTrainer(cfg.cloud, seed=cfg.seed, composer_log=log)
    channel = TcpChannel(conn, capacity=64, name="cloud")
    channel.send(trainer.initial_packet())
    while True:
        batch = channel.poll()
        if not batch:
            if channel.closed.is_set():
                break
            time.sleep(0.001)
            continue
        for payload in batch:
            trainer.receive(payload)
        for packet in trainer.take_outbox():
            channel.send(packet)
    out = Path(out_dir)
    with open(out / "composer.jsonl", "w") as fh:
        fh.writelines(json.dumps(rec) + "\n" for rec in log.records)
    (out / "cloud.json").write_text(json.dumps(trainer.diagnostics(), indent=2, default=str))
    return 0


def edge_main(cfg: ExperimentConfig, plant_port: int, cloud_port: int | None, out_dir: str) -> int:
    out = Path(out_dir)
    plant = _Link(socket.create_connection((cfg.host, plant_port), timeout=30.0))
    plant.sock.settimeout(None)
    recorder = TimingRecorder(cfg.total_steps)
    cloud: TcpChannel | None = None
    policy = None
    if cfg.learned:
        cloud = connect(cfg.host, cloud_port, capacity=256, name="edge-cloud")
        deadline = time.monotonic() + 30.0
        first = []
        while not first and time.monotonic() < deadline:
            first = cloud.poll()
            time.sleep(0.001)
        if not first:
            print("edge: no initial weights from cloud", file=sys.stderr)
            return 2
        pkt = decode_weight_packet(first[0])
        policy = EdgePolicy(pkt.weights, pkt.biases)
        edge = build_edge(cfg, policy, ship=cloud.send, recorder=recorder)
        for extra in first:
            edge.receiver.receive(extra)
        # Later packets are validated on the socket reader thread and staged.
        cloud.on_message = edge.receiver.receive
        for extra in cloud.poll():
            edge.receiver.receive(extra)
    else:
        edge = build_edge(cfg, None, recorder=recorder)

    log = MetricsLog(cfg.total_steps, meta={"config": cfg.to_dict(), "units": "rad", "mode": "split"})
    cloud_lost_at = None
    try:
        for k in range(cfg.total_steps):
            raw = plant.recv()
            if raw is None:
                log.fail(k, "plant connection closed")
                break
            if cloud is not None and cloud.inbox:
                for extra in cloud.poll():
                    edge.receiver.receive(extra)
            recorder.begin()
            sensor = decode_sensor_packet(raw)
            phi = np.array(sensor.phi)
            recorder.lap(SENSOR)
            step = edge.step(sensor.step, sensor.t, phi)
            plant.send(
                encode_action_packet(ActionPacket(sensor.step, step.generation, step.source, tuple(step.torque.tolist())))
            )
            recorder.lap(ACTION)
            recorder.commit()
            log.append(k, sensor.t, step.errors, step.reward, step.mode, step.source, int(not step.safe), step.amp)
            if not step.safe:
                log.fail(k, "safety: tracking error beyond 90 degrees")
                break
            if cloud is not None and cloud_lost_at is None and cloud.closed.is_set():
                cloud_lost_at = k
    except OSError as exc:
        log.fail(len(log), f"plant link error: {exc}")
    finally:
        plant.close()
        if cloud is not None:
            cloud.flush(timeout=5.0)
            cloud.close()

    timing = summarize(recorder, min(_WARMUP_DISCARD, max(recorder.count - 1, 0)))
    write_timing_csv(timing, out / "timing.csv")
    edge_info = {"transitions_shipped": edge.transitions_shipped, "cloud_lost_at": cloud_lost_at}
    if cloud is not None:
        edge_info["dropped_buffer_packets"] = cloud.dropped
    if edge.receiver is not None:
        edge_info["receiver"] = dict(edge.receiver.stats.__dict__)
        edge_info["policy_generation"] = edge.policy.generation
    result = ExperimentResult(cfg, log, None, [], edge_info)
    log.to_csv(out / "metrics.csv")
    summary = result.summary()
    summary["timing"] = timing.to_dict()
    (out / "edge.json").write_text(json.dumps(summary, indent=2, default=str))
    return 0


# -- orchestration ------------------------------------------------------------


class SplitResult:
    def __init__(self, out_dir: Path, returncodes: dict[str, int | None]):
        self.out_dir = out_dir
        self.returncodes = returncodes
        self.edge = json.loads((out_dir / "edge.json").read_text()) if (out_dir / "edge.json").exists() else {}
        cloud_file = out_dir / "cloud.json"
        self.cloud = json.loads(cloud_file.read_text()) if cloud_file.exists() else None

    @property
    def log(self) -> MetricsLog:
        return MetricsLog.from_csv(self.out_dir / "metrics.csv")


def _spawn(role: str, args: list[str], out: Path) -> subprocess.Popen:
    cmd = [sys.executable, "-m", "crl2rt.harness.split", role, *args]
    err = open(out / f"{role}.stderr.txt", "w")
    return subprocess.Popen(cmd, stdout=subprocess.DEVNULL, stderr=err)


def _wait_port(path: Path, proc: subprocess.Popen, timeout: float = 30.0) -> int:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if path.exists():
            return int(path.read_text())
        if proc.poll() is not None:
            raise RuntimeError(f"{path.stem} process exited early with code {proc.returncode}")
        time.sleep(0.01)
    raise TimeoutError(f"no port published at {path}")


def run_split(
    cfg: ExperimentConfig,
    out_dir: str | Path,
    kill_cloud_after: float | None = None,
    timeout: float | None = None,
) -> SplitResult:
    """Supervise plant, cloud and edge processes; returns once the edge finishes.

    ``kill_cloud_after`` (seconds after the edge starts) kills the cloud
    process to exercise the edge's independence from it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(cfg.to_dict(), indent=2, default=str))
    procs: dict[str, subprocess.Popen] = {}
    try:
        procs["plant"] = _spawn("plant", ["--config", str(cfg_path), "--port-file", str(out / "plant.port")], out)
        plant_port = _wait_port(out / "plant.port", procs["plant"])
        edge_args = ["--config", str(cfg_path), "--out", str(out), "--plant-port", str(plant_port)]
        if cfg.learned:
            procs["cloud"] = _spawn(
                "cloud", ["--config", str(cfg_path), "--port-file", str(out / "cloud.port"), "--out", str(out)], out
            )
            edge_args += ["--cloud-port", str(_wait_port(out / "cloud.port", procs["cloud"]))]
        procs["edge"] = _spawn("edge", edge_args, out)
        if kill_cloud_after is not None and "cloud" in procs:
            try:
                procs["edge"].wait(timeout=kill_cloud_after)
            except subprocess.TimeoutExpired:
                procs["cloud"].kill()
        procs["edge"].wait(timeout=timeout)
        for name in ("plant", "cloud"):
            if name in procs:
                try:
                    procs[name].wait(timeout=30.0)
                except subprocess.TimeoutExpired:
                    procs[name].kill()
    finally:
        for p in procs.values():
            if p.poll() is None:
                p.kill()
                p.wait()
    return SplitResult(out, {name: p.returncode for name, p in procs.items()})


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="crl2rt.harness.split")
    ap.add_argument("role", choices=("plant", "edge", "cloud"))
    ap.add_argument("--config", required=True)
    ap.add_argument("--port-file")
    ap.add_argument("--out", default=".")
    ap.add_argument("--plant-port", type=int)
    ap.add_argument("--cloud-port", type=int)
    args = ap.parse_args(argv)
    cfg = _load_config(args.config)
    if args.role == "plant":
        return plant_main(cfg, args.port_file)
    if args.role == "cloud":
        return cloud_main(cfg, args.port_file, args.out)
    return edge_main(cfg, args.plant_port, args.cloud_port, args.out)


if __name__ == "__main__":
    sys.exit(main())
