"""End-to-end run: control step -> tile network dissemination -> propagation -> report."""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .controller import Controller, Objective, ObjectiveKind, StepResult, TileCommand
from .emcompiler import LookupTable
from .geometry import Floorplan
from .propagation import (N_RAYS, align_phases, launch, pdp, received_power, rms_delay_spread)
from .tilenet import (Dissemination, chain_topology, disseminate, elect_representative,
                      topology_from_links)

REPORT_VERSION = 1


@dataclass
class Options:
    max_bounces: int = 3
    n_rays: int = N_RAYS
    seed: int = 0
    budget: int = 20000


@dataclass
class RunResult:
    report: dict
    controller: Controller
    step: StepResult
    disseminations: dict[int, Dissemination] = field(default_factory=dict)
    pdp_csv: dict[str, str] = field(default_factory=dict)

    @property
    def no_path(self) -> bool:
        return any(r["status"] == "NO_PATH" for r in self.report["objectives"])


def scenario_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dbm(value: float) -> Optional[float]:
    # JSON has no -inf; a fully shadowed receiver reports null
    return value if math.isfinite(value) else None


def object_topology(plan: Floorplan, wall_id: int) -> dict[int, list[int]]:
    """Wired topology of one wall: scenario ``tile_links`` if any touch it, else a chain."""
    ids = [t.id for t in plan.wall_tiles(wall_id)]
    idset = set(ids)
    links = [(a, b) for a, b in plan.tile_links if a in idset and b in idset]
    return topology_from_links(ids, links) if links else chain_topology(ids)


def distribute(plan: Floorplan, commands: Sequence[TileCommand]) -> dict[int, Dissemination]:
    """Disseminate commands object by object (one object per wall)."""
    by_wall: dict[int, list[TileCommand]] = {}
    for cmd in commands:
        by_wall.setdefault(plan.tile(cmd.tile_id).wall_id, []).append(cmd)
    out = {}
    for wall_id in sorted(by_wall):
        topo = object_topology(plan, wall_id)
        rep = elect_representative(topo)
        out[wall_id] = disseminate(rep, by_wall[wall_id], topo)
    return out


def run(
    plan: Floorplan,
    objectives: Sequence[Objective],
    options: Optional[Options] = None,
    *,
    table: Optional[LookupTable] = None,
    propagate: bool = True,
    digest: str = "",
) -> RunResult:
    options = options or Options()
    t0 = time.perf_counter()
    ctl = Controller(plan, max_bounces=options.max_bounces, budget=options.budget,
                     seed=options.seed, n_rays=options.n_rays, table=table)
    step = ctl.control_step(objectives)
    dissem = distribute(plan, step.commands)
    config = ctl.tile_functions()

    entries = []
    pdp_csv = {}
    for i, rep in enumerate(step.reports):
        obj = rep.objective
        entry = rep.to_dict()
        if propagate and obj.kind is not ObjectiveKind.BLOCK and rep.path is not None:
            src = plan.device(obj.src)
            paths = launch(src, plan, config, options.max_bounces, options.n_rays)[obj.dst]
            power = received_power(paths, src.tx_power_dbm)
            profile = pdp(paths, src.tx_power_dbm)
            entry["received"] = {
                "coherent_dbm": _dbm(power.coherent),
                "incoherent_dbm": _dbm(power.incoherent),
                "expected_dbm": src.tx_power_dbm - rep.path.total_loss,
            }
            if obj.kind is ObjectiveKind.LINK_OPTIMIZE and paths:
                offsets = align_phases(paths)
                entry["received"]["aligned_coherent_dbm"] = _dbm(
                    received_power(paths, src.tx_power_dbm, offsets).coherent)
            entry["rms_delay_spread_s"] = rms_delay_spread(profile)
            entry["n_paths"] = len(paths)
            entry["realized"] = any(p.hops == rep.path.tiles for p in paths)
            name = f"pdp_{i}.csv"
            entry["pdp_csv"] = name
            pdp_csv[name] = profile.to_csv()
        elif propagate and obj.kind is ObjectiveKind.BLOCK:
            src = plan.device(obj.src)
            reach = launch(src, plan, config, options.max_bounces, options.n_rays)
            entry["leakage_dbm"] = {
                dev: _dbm(received_power(paths, src.tx_power_dbm).incoherent)
                for dev, paths in sorted(reach.items())
            }
        entries.append(entry)

    report = {
        "version": REPORT_VERSION,
        "scenario_hash": digest,
        "options": {"max_bounces": options.max_bounces, "rays": options.n_rays,
                    "seed": options.seed, "budget": options.budget},
        "objectives": entries,
        "command_count": len(step.commands),
        "commands": [c.to_dict() for c in step.commands],
        "tile_states": {str(t): fn.kind.value for t, fn in config.items()},
        "dissemination": [
            {"object": wall_id, "representative": min(d.delivery), "rounds": d.rounds,
             "acks_complete": d.acks_complete, "frames": len(d.trace)}
            for wall_id, d in dissem.items()
        ],
        "frame_trace": "frames.jsonl",
        "wall_clock_s": time.perf_counter() - t0,
    }
    return RunResult(report, ctl, step, dissem, pdp_csv)


def frame_trace_lines(dissem: dict[int, Dissemination]) -> list[str]:
    lines = []
    for wall_id, d in dissem.items():
        for line in d.trace_lines():
            rec = json.loads(line)
            rec["object"] = wall_id
            lines.append(json.dumps(rec, sort_keys=True))
    return lines


def report_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
