"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 at least one objective without a path.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import pipeline
from .controller import objectives_from_dict
from .emcompiler import (LookupTable, Request, TileModel, atomic_write, compile, load_table,
                         save_table, table_get, table_put)
from .errors import HashMismatch, PwenvError
from .geometry import DEFAULT_FREQUENCY, floorplan_from_dict, read_scenario
from .propagation import N_RAYS, FnKind
from .render import render_svg

log = logging.getLogger("pwenv")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NO_PATH = 2


def _load(path: str):
    data = read_scenario(path)
    plan = floorplan_from_dict(data)
    return plan, objectives_from_dict(data, plan)


def _options(args) -> pipeline.Options:
    return pipeline.Options(max_bounces=args.max_bounces, n_rays=getattr(args, "rays", N_RAYS),
                            seed=args.seed, budget=args.budget)


def _table_for(args, plan) -> Optional[LookupTable]:
    if not args.table:
        return None
    model = TileModel(plan.columns_per_tile, plan.frequency)
    path = Path(args.table)
    if not path.exists():
        return LookupTable(model)
    table = load_table(path)
    if table.model.key != model.key:
        raise PwenvError(f"{path}: table is for model {table.model.key}, scenario needs {model.key}")
    return table


def cmd_simulate(args) -> int:
    plan, objectives = _load(args.scenario)
    table = _table_for(args, plan)
    result = pipeline.run(plan, objectives, _options(args), table=table,
                          digest=pipeline.scenario_hash(args.scenario))
    out = Path(args.out)
    for name, text in sorted(result.pdp_csv.items()):
        atomic_write(out / name, text)
    atomic_write(out / "frames.jsonl",
                 "".join(line + "\n" for line in pipeline.frame_trace_lines(result.disseminations)))
    atomic_write(out / "scene.svg", render_svg(plan, result.report))
    atomic_write(out / "report.json", pipeline.report_json(result.report))
    if table is not None:
        save_table(table, args.table)
    for entry in result.report["objectives"]:
        print(f"{entry['name']:40s} {entry['status']}")
    print(f"{result.report['command_count']} tile commands; report in {out / 'report.json'}")
    return EXIT_NO_PATH if result.no_path else EXIT_OK


def cmd_route(args) -> int:
    plan, objectives = _load(args.scenario)
    table = _table_for(args, plan)
    result = pipeline.run(plan, objectives, _options(args), table=table, propagate=False,
                          digest=pipeline.scenario_hash(args.scenario))
    atomic_write(Path(args.out) / "route.json", pipeline.report_json(result.report))
    if table is not None:
        save_table(table, args.table)
    for entry in result.report["objectives"]:
        nodes = entry.get("path", {}).get("nodes", [])
        print(f"{entry['name']:40s} {entry['status']:10s} {' -> '.join(map(str, nodes))}")
    return EXIT_NO_PATH if result.no_path else EXIT_OK


def cmd_compile(args) -> int:
    model = TileModel(args.columns, args.frequency)
    kind = FnKind(args.kind.upper())
    if kind is FnKind.ABSORB:
        request = Request(FnKind.ABSORB)
    elif kind is FnKind.SPECULAR:
        request = Request(kind, math.radians(args.theta_in), -math.radians(args.theta_in))
    else:
        request = Request(kind, math.radians(args.theta_in), math.radians(args.theta_out))
    table = LookupTable(model)
    if args.table and Path(args.table).exists():
        table = load_table(args.table)
        if table.model.key != model.key:
            raise PwenvError(f"{args.table}: table is for model {table.model.key}")
    request = request.quantized(table.bin_deg)
    cached = table_get(table, request)
    cfg = compile(model, request, args.frequency, args.budget, seed=args.seed)
    table_put(table, request, cfg)
    if args.table:
        save_table(table, args.table)
    best = table_get(table, request)
    print(f"bits={cfg.bits} quality={cfg.quality:.6g}")
    if cached is not None and best is cached:
        print(f"table kept existing entry bits={cached.bits} quality={cached.quality:.6g}")
    return EXIT_OK


def cmd_render(args) -> int:
    plan = floorplan_from_dict(read_scenario(args.scenario))
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PwenvError(f"{args.report}: {exc}") from exc
    digest = pipeline.scenario_hash(args.scenario)
    if report.get("scenario_hash") != digest:
        raise HashMismatch(f"{args.report} was produced for a different scenario")
    out = args.out or str(Path(args.report).with_suffix(".svg"))
    atomic_write(out, render_svg(plan, report))
    print(out)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PwenvError(f"{args.report}: {exc}") from exc
    print(f"scenario {report.get('scenario_hash', '')[:12]}  "
          f"commands {report.get('command_count', 0)}  "
          f"wall-clock {report.get('wall_clock_s', 0.0):.2f} s")
    for entry in report.get("objectives", []):
        line = f"  {entry['name']:36s} {entry['status']:10s}"
        path = entry.get("path")
        if path:
            line += f" loss {path['total_loss_db']:7.2f} dB  via {path['nodes'][1:-1]}"
        rec = entry.get("received")
        if rec and rec.get("coherent_dbm") is not None:
            line += f"  rx {rec['coherent_dbm']:7.2f} dBm"
        if "absorbed_tiles" in entry:
            line += f" absorbing {len(entry['absorbed_tiles'])} tiles"
        print(line)
    for d in report.get("dissemination", []):
        print(f"  object {d['object']}: rep {d['representative']}, {d['rounds']} rounds, "
              f"acks {'complete' if d['acks_complete'] else 'INCOMPLETE'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pwenv",
                                     description="Programmable wireless environment simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_flags(p, rays=True):
        p.add_argument("scenario")
        p.add_argument("--max-bounces", type=int, default=3)
        if rays:
            p.add_argument("--rays", type=int, default=N_RAYS)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--budget", type=int, default=20000)
        p.add_argument("--table", help="lookup table JSON to read and update")
        p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("simulate", help="full pipeline: route, disseminate, propagate, report")
    run_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("route", help="control step only (no propagation)")
    run_flags(p, rays=False)
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("compile", help="compile one tile function into switch states")
    p.add_argument("--kind", required=True, choices=["steer", "specular", "absorb", "focus"])
    p.add_argument("--in", dest="theta_in", type=float, default=0.0, help="incident angle, deg")
    p.add_argument("--out", dest="theta_out", type=float, default=0.0,
                   help="target angle (deg); for focus the direction of the focal point")
    p.add_argument("--columns", type=int, default=8)
    p.add_argument("--frequency", type=float, default=DEFAULT_FREQUENCY)
    p.add_argument("--budget", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--table")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("render", help="draw a scenario and its report as SVG")
    p.add_argument("scenario")
    p.add_argument("report")
    p.add_argument("--out", help="SVG path (default: report path with .svg)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="pretty-print a report")
    p.add_argument("report")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PwenvError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
