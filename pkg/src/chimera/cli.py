"""Command-line entry point: ``chimera <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from chimera.ghost.schema import ENV_ENDPOINT, ENV_POLL_INTERVAL, DeviceEndpoint


def _cmd_sweep(args) -> int:
    from chimera import orchestrator as orch

    if args.axis == "voltage":
        plan = orch.default_voltage_plan(time_scale=args.time_scale, seed=args.seed)
    else:
        plan = orch.default_frequency_plan(time_scale=args.time_scale, seed=args.seed)
    if args.dwell is not None:
        plan = orch.SweepPlan(plan.axis, plan.points, args.dwell, plan.time_scale, plan.seed)
    try:
        ep = DeviceEndpoint.from_env(args.endpoint, args.poll_interval)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        records = orch.run_sweep(plan, ep, out / "sweep.jsonl", resume=not args.fresh)
    except orch.SweepInterrupted as exc:
        print(f"sweep interrupted: {exc}; rerun the same command to resume", file=sys.stderr)
        return 3
    text, csv_text = orch.export_report(records)
    (out / "report.txt").write_text(text, encoding="utf-8")
    (out / "records.csv").write_text(csv_text, encoding="utf-8")
    print(text, end="")
    return 0


def _cmd_analyze(args) -> int:
    from chimera import orchestrator as orch

    pairs = orch.replay_log(args.log)
    if not pairs:
        print("no records in log", file=sys.stderr)
        return 1
    mismatched = [logged["index"] for logged, rec in pairs
                  if orch.canonical(logged) != orch.canonical(rec.to_dict())]
    text, csv_text = orch.export_report([rec for _, rec in pairs])
    print(text, end="")
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")
    if mismatched:
        print(f"replay mismatch at points {mismatched}", file=sys.stderr)
        return 2
    print(f"replay reproduced {len(pairs)} records exactly")
    return 0


def _cmd_benchmark(args) -> int:
    from chimera import reservoir

    result = reservoir.BENCHMARKS[args.task](args.seed)
    payload = result.to_dict() if hasattr(result, "to_dict") else result
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_serve_mock(args) -> int:
    from chimera.ghost.mock import MockConfig, serve_mock

    cfg = MockConfig.from_file(args.config) if args.config else MockConfig()
    if args.time_scale is not None:
        cfg.time_scale = args.time_scale
    server = serve_mock(cfg, host=args.host, port=args.port)
    print(f"mock device listening on {server.url} (time_scale={cfg.time_scale})", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


def _cmd_efficiency(args) -> int:
    from chimera.energetics import EnergeticsParams, efficiency_report

    p = EnergeticsParams(n=args.n, k=args.k, k_prime=args.k_prime, e_switch=args.e_switch, log_base=args.base)
    print(json.dumps(efficiency_report(p), indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chimera", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", help="run a voltage or frequency sweep")
    p.add_argument("--axis", choices=("voltage", "frequency"), default="voltage")
    p.add_argument("--endpoint", default=None, help=f"device base URL (default ${ENV_ENDPOINT})")
    p.add_argument("--poll-interval", type=float, default=None,
                   help=f"telemetry poll interval in s (default ${ENV_POLL_INTERVAL} or 3)")
    p.add_argument("--time-scale", type=float, default=1.0, help="simulated-clock speed-up (mock only)")
    p.add_argument("--dwell", type=float, default=None, help="override dwell seconds per point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--fresh", action="store_true", help="do not resume from an existing log")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("analyze", help="replay a sweep log offline")
    p.add_argument("--log", required=True)
    p.add_argument("--csv", default=None, help="write the per-point CSV here")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("benchmark", help="reservoir benchmarks")
    p.add_argument("--task", choices=("narma10", "mackey-glass", "esp", "separation"), required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_benchmark)

    p = sub.add_parser("serve-mock", help="run the mock device")
    p.add_argument("--config", default=None, help="JSON file of MockConfig fields")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--time-scale", type=float, default=None)
    p.set_defaults(func=_cmd_serve_mock)

    p = sub.add_parser("efficiency", help="energy-scaling report as JSON")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--base", choices=("2", "e", "10"), default="2")
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--k-prime", type=float, default=1.0)
    p.add_argument("--e-switch", type=float, default=1.0)
    p.set_defaults(func=_cmd_efficiency)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
