"""Command-line entry point: ``simulate``, ``bench-timing`` and ``compare``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiment import ALGORITHMS, ExperimentConfig, apply_overrides, run_experiment
from .metrics import MetricsLog, compare, last_quarter_error


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if args.config:
        cfg = apply_overrides(cfg, json.loads(Path(args.config).read_text()))
    overrides = {}
    for key, attr in (("condition", "condition"), ("algorithm", "algo"), ("seed", "seed"), ("total_steps", "steps")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    return apply_overrides(cfg, overrides)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir or "runs/latest")
    if args.split:
        from .split import run_split

        res = run_split(cfg, out)
        summary = res.edge
        if res.cloud is not None:
            summary["cloud"] = res.cloud
        (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str))
    else:
        cfg = apply_overrides(cfg, {"out_dir": str(out)})
        progress = (lambda k: print(f"step {k}", file=sys.stderr)) if args.verbose else None
        summary = run_experiment(cfg, progress).summary()
    status = summary.get("status", {})
    print(f"{cfg.algorithm} | {cfg.condition.label} | seed {cfg.seed} | steps {status.get('steps')}")
    if status.get("failed"):
        print(f"FAILED at step {status.get('fail_step')}: {status.get('fail_reason')}")
        return 1
    if "last_quarter_error_rad" in summary:
        print(f"last-quarter error: {summary['last_quarter_error_rad']:.6f} rad "
              f"({summary['last_quarter_error_normalized']:.4f} of amplitude)")
    print(f"outputs in {out}")
    return 0


def cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    from ..edgelink.timing import write_timing_csv

    if args.mode == "inproc":
        from .bench import BenchConfig, bench_timing

        report = bench_timing(BenchConfig(steps=args.steps + args.discard, discard=args.discard))
        print(report.text())
        write_timing_csv(report.matrix, out / "timing.csv")
        write_timing_csv(report.naive, out / "timing_naive.csv")
        (out / "bench.json").write_text(json.dumps(report.to_dict(), indent=2, default=str))
        return 0
    from .split import run_split

    cfg = apply_overrides(ExperimentConfig(), {"algorithm": "CRL2RT_PID", "total_steps": args.steps + args.discard})
    if args.config:
        cfg = apply_overrides(cfg, json.loads(Path(args.config).read_text()))
    res = run_split(cfg, out)
    print((out / "timing.csv").read_text())
    print(f"edge status: {res.edge.get('status')}")
    return 0


def cmd_compare(args) -> int:
    base = MetricsLog.from_csv(args.baseline)
    crl = MetricsLog.from_csv(args.crl)
    for name, log in (("baseline", base), ("crl", crl)):
        if log.failed:
            print(f"{name} run failed at step {log.fail_step} ({log.fail_reason}); not comparable")
            return 1
    b = last_quarter_error(base)
    c = last_quarter_error(crl)
    bn = last_quarter_error(base, normalized=True)
    cn = last_quarter_error(crl, normalized=True)
    print(f"baseline last-quarter error: {b:.6f} rad ({bn:.4f} normalized)")
    print(f"crl      last-quarter error: {c:.6f} rad ({cn:.4f} normalized)")
    print(f"improvement: {compare(b, c):.1f}%")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="crl2rt")
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one closed-loop experiment")
    sim.add_argument("--condition", help='e.g. "Load 1, 40 Hz configuration" or load1-40')
    sim.add_argument("--algo", choices=ALGORITHMS)
    sim.add_argument("--steps", type=int)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out")
    sim.add_argument("--config", help="JSON file of (nested) config overrides")
    mode = sim.add_mutually_exclusive_group()
    mode.add_argument("--inproc", action="store_true", help="single thread, deterministic (default)")
    mode.add_argument("--split", action="store_true", help="plant, edge and cloud as separate processes")
    sim.add_argument("-v", "--verbose", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    bench = sub.add_parser("bench-timing", help="edge per-stage timing breakdown")
    bench.add_argument("--mode", choices=("inproc", "split"), default="inproc")
    bench.add_argument("--steps", type=int, default=5000, help="measured steps after warm-up")
    bench.add_argument("--discard", type=int, default=1000)
    bench.add_argument("--out", default="runs/bench")
    bench.add_argument("--config")
    bench.set_defaults(func=cmd_bench)

    cmp_ = sub.add_parser("compare", help="last-quarter comparison of two metrics CSVs")
    cmp_.add_argument("--baseline", required=True)
    cmp_.add_argument("--crl", required=True)
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
