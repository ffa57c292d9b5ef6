"""Command line entry points: generate streams, run scenarios, serve the engine."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
import time
from pathlib import Path

from .engine import Engine, EngineConfig
from .generate import GenParams, read_events, write_events
from .manager import BudgetTrace
from .operators import DprSpec
from .scenario import Scenario, run_scenario


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fluidstream")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic event stream")
    gen.add_argument("--seed", type=int, default=1)
    gen.add_argument("--hours", type=int, default=24)
    gen.add_argument("--base-rate", type=int, default=2000, help="events per hour before the curve")
    gen.add_argument("--rate-curve", choices=["diurnal", "flat"], default="diurnal")
    gen.add_argument("--spike-hours", type=str, default=None, help="h0:h1 pull-request surge")
    gen.add_argument("--spam-hours", type=str, default=None, help="h0:h1 single-actor flood")
    gen.add_argument("--out", required=True, help=".jsonl or .jsonl.gz output path")

    run = sub.add_parser("run", help="replay a scripted scenario and write reports")
    run.add_argument("--scenario", required=True, help="scenario JSON file")
    run.add_argument("--events", default=None, help="event stream file (.jsonl[.gz])")
    run.add_argument("--budget", default=None, help="budget trace CSV")
    run.add_argument("--report", default=None, help="report output directory")
    run.add_argument("--speedup", type=float, default=None,
                     help="replay pacing; 0 runs unpaced (default: scenario value)")

    serve = sub.add_parser("serve", help="serve the engine control API")
    serve.add_argument("--listen", default="127.0.0.1:8000")
    serve.add_argument("--log-dir", default=None)
    serve.add_argument("--events", default=None, help="replay this stream in the background")
    serve.add_argument("--speedup", type=float, default=60.0)
    serve.add_argument("--budget", default=None, help="budget trace CSV for the manager")
    serve.add_argument("--console", default=None, help="console asset directory to mount at /console")

    fusedump = sub.add_parser("fusedump", help="dump the fused DAG for a set of routine specs")
    fusedump.add_argument("--level", type=int, choices=[0, 1, 2], default=2)
    fusedump.add_argument("specs", nargs="+", help="routine spec JSON files")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s %(message)s")

    if args.command == "gen":
        return _cmd_gen(args)
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "serve":
        return _cmd_serve(args)
    return _cmd_fusedump(args)


def _parse_hours(text: str | None) -> tuple[int, int] | None:
    if not text:
        return None
    lo, hi = text.split(":")
    return (int(lo), int(hi))


def _cmd_gen(args) -> int:
    params = GenParams(
        hours=args.hours, base_rate=args.base_rate, seed=args.seed,
        rate_curve=args.rate_curve,
        spike_hours=_parse_hours(args.spike_hours),
        spam_hours=_parse_hours(args.spam_hours),
    )
    count = write_events(args.out, params)
    print(f"wrote {count} events to {args.out}")
    return 0


def _cmd_run(args) -> int:
    scenario = Scenario.from_json(json.loads(Path(args.scenario).read_text()))
    if args.speedup is not None:
        scenario.speedup = args.speedup
    events = read_events(args.events) if args.events else None
    trace = BudgetTrace.from_csv(Path(args.budget).read_text()) if args.budget else None
    report = run_scenario(scenario, events=events, trace=trace, report_dir=args.report)
    print(report.summary())
    if args.report:
        print(f"report files in {args.report}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn
    from .api import create_app

    host, port = args.listen.rsplit(":", 1)
    engine = Engine(EngineConfig(log_dir=args.log_dir, threaded=True))
    if args.budget:
        engine.budget_trace = BudgetTrace.from_csv(Path(args.budget).read_text())
    app = create_app(engine, console_dist=args.console)

    if args.events:
        threading.Thread(target=_replay, args=(engine, args.events, args.speedup),
                         daemon=True, name="replay").start()
    if engine.budget_trace is not None:
        threading.Thread(target=_tick_loop, args=(engine,), daemon=True,
                         name="manager-tick").start()

    try:
        uvicorn.run(app, host=host, port=int(port), log_level="warning")
    finally:
        engine.close()
    return 0


def _replay(engine: Engine, path: str, speedup: float) -> None:
    from .fields import probe_timestamp

    prev_ts = None
    for payload in read_events(path):
        ts = probe_timestamp(payload)
        if speedup and prev_ts is not None and ts is not None and ts > prev_ts:
            time.sleep(min((ts - prev_ts) / 1000.0 / speedup, 1.0))
        if ts is not None:
            prev_ts = ts
        engine.ingest(payload)


def _tick_loop(engine: Engine) -> None:
    period = engine.manager.tick_period_ms / 1000.0
    while True:
        time.sleep(period)
        if engine.manager.mode == "auto":
            engine.manager_tick()


def _cmd_fusedump(args) -> int:
    from .fusion import fuse

    specs = [DprSpec.from_json(json.loads(Path(p).read_text())) for p in args.specs]
    print(json.dumps(fuse(specs, args.level).dump(), indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
