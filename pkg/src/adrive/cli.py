"""Command line entry point: ``adrive run|matrix|validate|presets|report``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from contextlib import ExitStack
from pathlib import Path

from . import presets as preset_mod
from .config import PROTOCOL_NAMES, ConfigError, SimConfig, load_config, validate
from .experiment import DEFAULT_REPS, DEFAULT_SIZES, DEFAULT_VOLUMES, run_matrix
from .sim import RunResult, SafetyViolation, Simulation, trip_delay

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_UNSAFE = 3


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _base_config(args) -> SimConfig:
    if getattr(args, "preset", None):
        config = preset_mod.get(args.preset).config()
    elif args.config:
        config = load_config(args.config)
    else:
        config = SimConfig()
    changes = {}
    if getattr(args, "protocol", None):
        changes["protocol"] = args.protocol
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "duration", None) is not None:
        changes["duration_s"] = args.duration
        changes["scoring_window_s"] = min(config.scoring_window_s, args.duration)
    return config.replace(**changes) if changes else config


def _summary(result: RunResult, wall: float) -> dict:
    def num(x):
        return None if isinstance(x, float) and math.isnan(x) else round(x, 4)

    return {
        "protocol": result.protocol,
        "seed": result.seed,
        "scored_trips": len(result.scored),
        "completed_scored": len(result.delays),
        "incomplete": result.incomplete,
        "avg_delay_s": num(result.average_delay),
        "worst_delay_s": num(result.worst_delay),
        "deadlocks": result.deadlocks,
        "mean_resolution_s": num(result.mean_resolution),
        "collisions": result.collisions,
        "unresolved": len(result.unresolved),
        "sim_end_s": round(result.end_t, 3),
        "wall_s": round(wall, 2),
    }


def _write_trips(result: RunResult, path: Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "path", "kind", "spawn_t", "end_t", "free_flow_s", "delay_s", "scored"])
        for r in result.trips:
            end = "" if r.end_point_t is None else f"{r.end_point_t:.4f}"
            delay = "" if r.end_point_t is None else f"{trip_delay(r):.4f}"
            scored = int(r.spawn_t >= result.scored_from - 1e-9)
            w.writerow([r.vehicle_id, r.path, r.kind.value, f"{r.spawn_t:.4f}", end, f"{r.free_flow_s:.4f}", delay, scored])


def cmd_run(args) -> int:
    config = _base_config(args)
    problems = validate(config)
    if problems:
        for p in problems:
            print(f"config: {p}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    with ExitStack() as stack:
        events = stack.enter_context(open(args.events, "w")) if args.events else None
        beacons = stack.enter_context(open(args.beacons, "w")) if args.beacons else None
        try:
            result = Simulation(config, events, beacons).run()
        except SafetyViolation as exc:
            print("safety violation:", file=sys.stderr)
            for m in exc.messages:
                print(f"  {m}", file=sys.stderr)
            return EXIT_UNSAFE
    summary = _summary(result, time.perf_counter() - t0)
    if args.out:
        _write_trips(result, Path(args.out))
    print(json.dumps(summary, indent=2))
    return EXIT_UNSAFE if result.collisions else EXIT_OK


def cmd_matrix(args) -> int:
    base = _base_config(args)
    protocols = args.protocols.split(",") if args.protocols else list(PROTOCOL_NAMES)
    unknown = set(protocols) - set(PROTOCOL_NAMES)
    if unknown:
        print(f"unknown protocols: {sorted(unknown)}", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()

    def progress(done, total, row):
        if not args.quiet:
            tag = row["error"] or f"avg {row['avg_delay_s']} s"
            print(f"[{done}/{total}] {row['protocol']} {row['volume']} vph {row['size']} m seed {row['seed']}: {tag}", file=sys.stderr)

    try:
        rows = run_matrix(
            base,
            volumes=args.volumes,
            sizes=args.sizes,
            protocols=protocols,
            reps=args.reps,
            out=args.out,
            jobs=args.jobs,
            progress=progress,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    collisions = sum(int(r["collisions"] or 0) for r in rows)
    errors = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} runs in {time.perf_counter() - t0:.1f} s, {collisions} collisions, {errors} errors -> {args.out}")
    if collisions:
        return EXIT_UNSAFE
    return 1 if errors else EXIT_OK


def cmd_validate(args) -> int:
    bad = 0
    for path in args.configs:
        try:
            problems = validate(load_config(path))
        except (ConfigError, OSError, ValueError) as exc:
            problems = [str(exc)]
        if problems:
            bad += 1
            for p in problems:
                print(f"{path}: {p}")
        else:
            print(f"{path}: ok")
    return 1 if bad else EXIT_OK


def cmd_presets(args) -> int:
    if not args.run:
        width = max(len(n) for n in preset_mod.PRESETS)
        for name, p in preset_mod.PRESETS.items():
            print(f"{name:<{width}}  {p.summary}")
        return EXIT_OK
    names = list(preset_mod.PRESETS) if args.run == "all" else [args.run]
    protocols = [args.protocol] if args.protocol else list(PROTOCOL_NAMES)
    unsafe = False
    for name in names:
        preset = preset_mod.get(name)
        for proto in protocols:
            try:
                result = Simulation(preset.config(proto, seed=args.seed or 0)).run()
            except SafetyViolation as exc:
                print(f"{name} {proto}: safety violation: {exc}")
                unsafe = True
                continue
            res = ", ".join(f"{t:.2f}" for t in result.resolution_times) or "none"
            print(
                f"{name} {proto}: deadlocks {result.deadlocks}, resolved in {res} s, "
                f"collisions {result.collisions}, unresolved {len(result.unresolved)}, worst delay {result.worst_delay:.2f} s"
            )
            unsafe |= bool(result.collisions)
    return EXIT_UNSAFE if unsafe else EXIT_OK


def cmd_report(args) -> int:
    from .plotting import render_report

    figures, table = render_report(args.csv, args.out_dir)
    print(table)
    for f in figures:
        print(f"wrote {f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adrive", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate one scenario")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", help="YAML run configuration")
    src.add_argument("--preset", choices=sorted(preset_mod.PRESETS), help="start from a failure preset")
    p.add_argument("--protocol", choices=PROTOCOL_NAMES)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float, help="override duration_s (s)")
    p.add_argument("--out", help="write one CSV row per trip here")
    p.add_argument("--events", help="write protocol events as NDJSON here")
    p.add_argument("--beacons", help="write every beacon frame as NDJSON here")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("matrix", help="sweep volume x size x protocol x seed")
    p.add_argument("--config", help="base YAML configuration (single_track scene)")
    p.add_argument("--volumes", type=_floats, default=list(DEFAULT_VOLUMES), help="veh/h per direction, comma separated")
    p.add_argument("--sizes", type=_floats, default=list(DEFAULT_SIZES), help="section lengths in m, comma separated")
    p.add_argument("--reps", type=int, default=DEFAULT_REPS)
    p.add_argument("--protocols", help=f"comma separated subset of {','.join(PROTOCOL_NAMES)}")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, help="base seed; cell i runs with base + i")
    p.add_argument("--duration", type=float, help="override duration_s (s)")
    p.add_argument("--out", default="results.csv")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("validate", help="check configuration files")
    p.add_argument("configs", nargs="+")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("presets", help="list the failure presets, or run them")
    p.add_argument("--run", metavar="NAME", help="preset name or 'all'")
    p.add_argument("--protocol", choices=PROTOCOL_NAMES)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("report", help="summarize a results CSV and draw its figures")
    p.add_argument("csv")
    p.add_argument("--out-dir", help="defaults to the CSV's folder")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
