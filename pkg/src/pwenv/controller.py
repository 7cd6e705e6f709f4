"""SDN-style environment controller.

Tiles are wave routers.  The controller builds the visibility graph over
coated tiles and devices, finds an air path per objective, arbitrates tiles
between objectives by priority, and emits per-tile commands.

Path loss follows the re-collimation model used by :mod:`pwenv.propagation`:
``FSPL(total unfolded length) + sum of tile losses``.  For a fixed number of
tiles the tile term is constant, so the optimum is the shortest unfolded
route per hop count, which a hop-indexed shortest-path pass finds exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import networkx as nx

from .emcompiler import (LookupTable, SwitchConfig, TileModel, compile, request_for,
                         table_get, table_put)
from .errors import NoPathError, ValidationError
from .geometry import Floorplan, Role, line_of_sight, point_segment_distance
from .propagation import (DEFAULT_EFFICIENCY, N_RAYS, EmFunction, FnKind, free_space_loss,
                          illuminated_tiles)

log = logging.getLogger(__name__)

P_MIN_DBM = -90.0
DEFAULT_AVOID_RADIUS = 1.0
_LEN_TOL = 1e-9
_LOSS_TOL = 1e-9


class ObjectiveKind(str, Enum):
    LINK_OPTIMIZE = "LINK_OPTIMIZE"
    SECURE_LINK = "SECURE_LINK"
    POWER_TRANSFER = "POWER_TRANSFER"
    BLOCK = "BLOCK"


# lower value wins a contested tile
PRIORITY = {
    ObjectiveKind.BLOCK: 0,
    ObjectiveKind.SECURE_LINK: 1,
    ObjectiveKind.POWER_TRANSFER: 2,
    ObjectiveKind.LINK_OPTIMIZE: 3,
}


@dataclass(frozen=True)
class Objective:
    kind: ObjectiveKind
    src: str
    dst: Optional[str] = None
    avoid_radius: float = DEFAULT_AVOID_RADIUS

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        if self.kind is ObjectiveKind.BLOCK:
            if self.dst is not None:
                raise ValueError("BLOCK objectives take no dst")
        elif self.dst is None:
            raise ValueError(f"{self.kind.value} needs a dst")
        if self.src == self.dst:
            raise ValueError("src and dst must differ")
        if not self.avoid_radius >= 0:
            raise ValueError("avoid_radius must be non-negative")

    @property
    def name(self) -> str:
        if self.dst is None:
            return f"{self.kind.value}:{self.src}"
        return f"{self.kind.value}:{self.src}->{self.dst}"

    @property
    def sort_key(self) -> tuple:
        return (PRIORITY[self.kind], self.src, self.dst or "")

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "src": self.src}
        if self.dst is not None:
            out["dst"] = self.dst
        if self.kind is ObjectiveKind.SECURE_LINK:
            out["avoid_radius"] = self.avoid_radius
        return out


_OBJ_KEYS = {"kind", "src", "dst", "avoid_radius"}


def objectives_from_dict(data: dict, plan: Floorplan) -> list[Objective]:
    """Parse and validate the scenario's ``objectives`` list."""
    raw = data.get("objectives", [])
    if not isinstance(raw, list):
        raise ValidationError("objectives", "expected a list")
    known = {d.id for d in plan.devices}
    out = []
    for i, o in enumerate(raw):
        where = f"objectives[{i}]"
        if not isinstance(o, dict):
            raise ValidationError(where, "expected an object")
        extra = sorted(set(o) - _OBJ_KEYS)
        if extra:
            raise ValidationError(f"{where}.{extra[0]}", "unknown field")
        try:
            kind = ObjectiveKind(o.get("kind"))
        except ValueError:
            raise ValidationError(f"{where}.kind", f"unknown kind {o.get('kind')!r}") from None
        for key in ("src", "dst"):
            if key in o and o[key] not in known:
                raise ValidationError(f"{where}.{key}", f"unknown device {o[key]!r}")
        if "src" not in o:
            raise ValidationError(f"{where}.src", "missing")
        try:
            obj = Objective(kind, o["src"], o.get("dst"),
                            float(o.get("avoid_radius", DEFAULT_AVOID_RADIUS)))
        except (TypeError, ValueError) as exc:
            raise ValidationError(where, str(exc)) from None
        if kind is ObjectiveKind.BLOCK and plan.device(obj.src).role is not Role.BLOCKED:
            raise ValidationError(f"{where}.src", "BLOCK target must have role BLOCKED")
        out.append(obj)
    return out


@dataclass(frozen=True)
class AirPath:
    nodes: tuple
    segment_lengths: tuple[float, ...]
    segment_losses: tuple[float, ...]
    total_loss: float
    objective: Objective
    functions: tuple[EmFunction, ...] = ()

    @property
    def tiles(self) -> tuple[int, ...]:
        return tuple(self.nodes[1:-1])

    @property
    def bounces(self) -> int:
        return len(self.nodes) - 2

    @property
    def total_length(self) -> float:
        return math.fsum(self.segment_lengths)

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "segment_lengths": list(self.segment_lengths),
            "segment_losses_db": list(self.segment_losses),
            "total_loss_db": self.total_loss,
            "functions": [fn.to_dict() for fn in self.functions],
        }


@dataclass(frozen=True)
class TileCommand:
    seq: int
    tile_id: int
    fn: EmFunction
    config: SwitchConfig

    def to_dict(self) -> dict:
        return {"seq": self.seq, "tile_id": self.tile_id, "fn": self.fn.to_dict(),
                "config": {"bits": self.config.bits, "quality": self.config.quality}}

    @classmethod
    def from_dict(cls, d: dict) -> "TileCommand":
        cfg = d["config"]
        return cls(int(d["seq"]), int(d["tile_id"]), EmFunction.from_dict(d["fn"]),
                   SwitchConfig(cfg["bits"], float(cfg["quality"])))


def tile_loss_db(kind: FnKind) -> float:
    return -10.0 * math.log10(DEFAULT_EFFICIENCY[kind])


def build_tile_graph(plan: Floorplan, frequency: Optional[float] = None) -> nx.DiGraph:
    """Directed visibility graph over coated tiles and devices.

    An edge needs line of sight between reference points (tile centres,
    device positions), and every tile endpoint of it must see the other end on
    its front side.  Edges carry ``length`` (m) and ``weight`` (dB: FSPL of
    the segment plus the STEER loss when leaving a tile).
    """
    f = plan.frequency if frequency is None else frequency
    g = nx.DiGraph(frequency=f)
    tiles = [t for t in plan.tiles if plan.is_coated(t.id)]
    for d in plan.devices:
        g.add_node(d.id, kind="device", pos=tuple(d.position), role=d.role)
    for t in tiles:
        g.add_node(t.id, kind="tile", pos=tuple(t.center), tile=t)
    steer_loss = tile_loss_db(FnKind.STEER)

    def link(u, v, pu, pv, exclude):
        if not line_of_sight(pu, pv, plan, exclude_walls=exclude):
            return
        length = math.dist(pu, pv)
        fspl = free_space_loss(length, f)
        g.add_edge(u, v, length=length,
                   weight=fspl + (steer_loss if isinstance(u, int) else 0.0))
        g.add_edge(v, u, length=length,
                   weight=fspl + (steer_loss if isinstance(v, int) else 0.0))

    devs = list(plan.devices)
    for i, a in enumerate(devs):
        for b in devs[i + 1:]:
            link(a.id, b.id, a.position, b.position, ())
    for t in tiles:
        for d in devs:
            if t.in_front(d.position):
                link(t.id, d.id, t.center, d.position, (t.wall_id,))
    for i, a in enumerate(tiles):
        for b in tiles[i + 1:]:
            if a.in_front(b.center) and b.in_front(a.center):
                link(a.id, b.id, a.center, b.center, {a.wall_id, b.wall_id})
    return g


def airpath_functions(graph: nx.DiGraph, nodes: Sequence, kind: ObjectiveKind) -> tuple[EmFunction, ...]:
    """Per-tile functions realising ``nodes``: STEER from predecessor to successor."""
    fns = []
    for i in range(1, len(nodes) - 1):
        tile = graph.nodes[nodes[i]]["tile"]
        prev = graph.nodes[nodes[i - 1]]["pos"]
        nxt = graph.nodes[nodes[i + 1]]["pos"]
        theta_in = tile.angle_to(prev)
        if kind is ObjectiveKind.POWER_TRANSFER and i == len(nodes) - 2:
            fns.append(EmFunction.focus_on(nxt, theta_in))
        else:
            fns.append(EmFunction.steer(theta_in, tile.angle_to(nxt)))
    return tuple(fns)


def _hop_loss(kind: ObjectiveKind, hops: int) -> float:
    if hops == 0:
        return 0.0
    if kind is ObjectiveKind.POWER_TRANSFER:
        return (hops - 1) * tile_loss_db(FnKind.STEER) + tile_loss_db(FnKind.FOCUS)
    return hops * tile_loss_db(FnKind.STEER)


def path_loss_db(graph: nx.DiGraph, nodes: Sequence, kind: ObjectiveKind) -> float:
    """FSPL of the unfolded length plus the tile losses of ``nodes``."""
    length = math.fsum(graph.edges[u, v]["length"] for u, v in zip(nodes, nodes[1:]))
    return free_space_loss(length, graph.graph["frequency"]) + _hop_loss(kind, len(nodes) - 2)


def compute_airpath(
    graph: nx.DiGraph,
    obj: Objective,
    max_bounces: int = 3,
    exclude_tiles: Iterable[int] = (),
) -> AirPath:
    """Minimum-loss route src -> dst through at most ``max_bounces`` tiles.

    SECURE_LINK drops every tile and segment that comes within
    ``avoid_radius`` of an eavesdropper.  Ties go to fewer hops, then to the
    lexicographically smaller tile sequence.
    """
    if obj.kind is ObjectiveKind.BLOCK:
        raise ValueError("BLOCK objectives are not routed; use apply_block")
    for dev in (obj.src, obj.dst):
        if dev not in graph or graph.nodes[dev]["kind"] != "device":
            raise ValueError(f"unknown device {dev!r}")
    excluded = set(exclude_tiles)
    src, dst = obj.src, obj.dst
    pos = graph.nodes

    eaves = []
    if obj.kind is ObjectiveKind.SECURE_LINK:
        eaves = [a["pos"] for n, a in graph.nodes(data=True)
                 if a["kind"] == "device" and a["role"] is Role.EAVESDROPPER and n not in (src, dst)]
    r = obj.avoid_radius

    def node_ok(n) -> bool:
        if n in excluded:
            return False
        return all(math.dist(pos[n]["pos"], e) > r for e in eaves)

    seg_cache: dict[tuple, bool] = {}

    def edge_ok(u, v) -> bool:
        if not eaves:
            return True
        key = (u, v) if str(u) <= str(v) else (v, u)
        if key not in seg_cache:
            pu, pv = pos[u]["pos"], pos[v]["pos"]
            seg_cache[key] = all(point_segment_distance(e, pu, pv) > r for e in eaves)
        return seg_cache[key]

    f = graph.graph["frequency"]
    candidates = []  # (loss, hops, tile sequence, length)
    if graph.has_edge(src, dst) and edge_ok(src, dst) and node_ok(src) and node_ok(dst):
        length = graph.edges[src, dst]["length"]
        candidates.append((free_space_loss(length, f), 0, (), length))

    def better(cand, cur) -> bool:
        if cur is None or cand[0] < cur[0] - _LEN_TOL:
            return True
        return abs(cand[0] - cur[0]) <= _LEN_TOL and cand[1] < cur[1]

    labels: dict[int, tuple[float, tuple[int, ...]]] = {}
    if node_ok(src) and node_ok(dst):
        for v in graph.successors(src):
            if pos[v]["kind"] == "tile" and node_ok(v) and edge_ok(src, v):
                labels[v] = (graph.edges[src, v]["length"], (v,))

    for hops in range(1, max_bounces + 1):
        if not labels:
            break
        closing = None
        for t, (length, seq) in labels.items():
            if graph.has_edge(t, dst) and edge_ok(t, dst):
                cand = (length + graph.edges[t, dst]["length"], seq)
                if better(cand, closing):
                    closing = cand
        if closing is not None:
            total, seq = closing
            candidates.append((free_space_loss(total, f) + _hop_loss(obj.kind, hops),
                               hops, seq, total))
        if hops == max_bounces:
            break
        nxt: dict[int, tuple[float, tuple[int, ...]]] = {}
        for u, (length, seq) in labels.items():
            for v in graph.successors(u):
                if pos[v]["kind"] != "tile" or not node_ok(v) or not edge_ok(u, v):
                    continue
                cand = (length + graph.edges[u, v]["length"], seq + (v,))
                if better(cand, nxt.get(v)):
                    nxt[v] = cand
        labels = nxt

    if not candidates:
        raise NoPathError(f"{obj.name}: no compliant air path within {max_bounces} bounces")
    best = candidates[0]
    for c in candidates[1:]:
        if c[0] < best[0] - _LOSS_TOL or (abs(c[0] - best[0]) <= _LOSS_TOL and c[1:3] < best[1:3]):
            best = c
    _, _, seq, _ = best
    nodes = (src,) + seq + (dst,)
    edges = list(zip(nodes, nodes[1:]))
    return AirPath(
        nodes=nodes,
        segment_lengths=tuple(graph.edges[e]["length"] for e in edges),
        segment_losses=tuple(graph.edges[e]["weight"] for e in edges),
        total_loss=path_loss_db(graph, nodes, obj.kind),
        objective=obj,
        functions=airpath_functions(graph, nodes, obj.kind),
    )


def blocking_set(
    plan: Floorplan,
    blocked: str,
    assigned: Iterable[int] = (),
    *,
    p_min: float = P_MIN_DBM,
    n_rays: int = N_RAYS,
) -> list[int]:
    """Coated tiles first-lit by ``blocked`` at or above ``p_min`` dBm, minus ``assigned``."""
    dev = plan.device(blocked)
    if dev.role is not Role.BLOCKED:
        raise ValueError(f"device {blocked!r} is not BLOCKED")
    taken = set(assigned)
    lit = illuminated_tiles(dev, plan, n_rays)
    return [t for t, p in lit.items() if p >= p_min and plan.is_coated(t) and t not in taken]


@dataclass
class ObjectiveReport:
    objective: Objective
    status: str
    path: Optional[AirPath] = None
    rerouted: bool = False
    absorbed: tuple[int, ...] = ()
    message: str = ""

    def to_dict(self) -> dict:
        out = {"objective": self.objective.to_dict(), "name": self.objective.name,
               "status": self.status, "rerouted": self.rerouted}
        if self.path is not None:
            out["path"] = self.path.to_dict()
        if self.objective.kind is ObjectiveKind.BLOCK:
            out["absorbed_tiles"] = list(self.absorbed)
        if self.message:
            out["message"] = self.message
        return out


@dataclass
class StepResult:
    commands: list[TileCommand] = field(default_factory=list)
    reports: list[ObjectiveReport] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(r.status == "SATISFIED" for r in self.reports)


class Controller:
    """Stateful controller: current tile assignments, command sequence, compiler tables."""

    def __init__(
        self,
        plan: Floorplan,
        *,
        max_bounces: int = 3,
        budget: int = 20000,
        seed: int = 0,
        n_rays: int = N_RAYS,
        p_min: float = P_MIN_DBM,
        table: Optional[LookupTable] = None,
        frequency: Optional[float] = None,
    ):
        self.plan = plan
        self.frequency = plan.frequency if frequency is None else frequency
        self.max_bounces = max_bounces
        self.budget = budget
        self.seed = seed
        self.n_rays = n_rays
        self.p_min = p_min
        self.graph = build_tile_graph(plan, self.frequency)
        self.tables: dict[str, LookupTable] = {}
        if table is not None:
            self.tables[table.model.key] = table
        self.state: dict[int, TileCommand] = {}
        self.seq = 0
        self.compile_calls = 0

    def model_for(self, tile_id: int) -> TileModel:
        return TileModel(self.plan.tile(tile_id).columns, self.frequency)

    def table_for(self, model: TileModel) -> LookupTable:
        if model.key not in self.tables:
            self.tables[model.key] = LookupTable(model)
        return self.tables[model.key]

    def _next_seq(self) -> int:
        self.seq += 1
        return self.seq

    def configure(self, tile_id: int, fn: EmFunction) -> SwitchConfig:
        """Switch config for ``fn`` on ``tile_id``: table hit, else compile and store."""
        model = self.model_for(tile_id)
        table = self.table_for(model)
        request = request_for(fn, self.plan.tile(tile_id)).quantized(table.bin_deg)
        cfg = table_get(table, request)
        if cfg is None:
            self.compile_calls += 1
            cfg = compile(model, request, self.frequency, self.budget, seed=self.seed)
            table_put(table, request, cfg)
        return cfg

    def emit_commands(self, path: AirPath) -> list[TileCommand]:
        return [TileCommand(self._next_seq(), t, fn, self.configure(t, fn))
                for t, fn in zip(path.tiles, path.functions)]

    def apply_block(self, blocked: str, assigned: Iterable[int] = ()) -> list[TileCommand]:
        """ABSORB commands for tiles lit by ``blocked``; never touches ``assigned`` tiles."""
        absorb = EmFunction.absorb()
        tiles = blocking_set(self.plan, blocked, assigned, p_min=self.p_min, n_rays=self.n_rays)
        return [TileCommand(self._next_seq(), t, absorb, self.configure(t, absorb)) for t in tiles]

    def plan_objectives(self, objectives: Sequence[Objective]) -> tuple[dict[int, EmFunction], list[ObjectiveReport]]:
        """Desired tile functions and per-objective outcomes, without touching state."""
        desired: dict[int, EmFunction] = {}
        reports: dict[int, ObjectiveReport] = {}
        order = sorted(range(len(objectives)), key=lambda i: objectives[i].sort_key)
        for i in order:
            obj = objectives[i]
            if obj.kind is ObjectiveKind.BLOCK:
                tiles = blocking_set(self.plan, obj.src, desired, p_min=self.p_min,
                                     n_rays=self.n_rays)
                absorb = EmFunction.absorb()
                for t in tiles:
                    desired[t] = absorb
                reports[i] = ObjectiveReport(obj, "SATISFIED", absorbed=tuple(tiles))
                continue
            try:
                path = compute_airpath(self.graph, obj, self.max_bounces)
                rerouted = any(t in desired and desired[t] != fn
                               for t, fn in zip(path.tiles, path.functions))
                if rerouted:
                    path = compute_airpath(self.graph, obj, self.max_bounces, exclude_tiles=desired)
            except NoPathError as exc:
                log.info("%s", exc)
                reports[i] = ObjectiveReport(obj, "NO_PATH", message=str(exc))
                continue
            for t, fn in zip(path.tiles, path.functions):
                desired[t] = fn
            reports[i] = ObjectiveReport(obj, "SATISFIED", path, rerouted)
        return desired, [reports[i] for i in range(len(objectives))]

    def control_step(self, objectives: Sequence[Objective]) -> StepResult:
        """One control-loop iteration; returns only the commands that change tile state.

        Tiles no longer wanted by any objective are reset to SPECULAR.
        Re-running with unchanged inputs yields no commands.
        """
        desired, reports = self.plan_objectives(objectives)
        commands = []
        for t, fn in desired.items():
            current = self.state.get(t)
            if current is None or current.fn != fn:
                commands.append(TileCommand(self._next_seq(), t, fn, self.configure(t, fn)))
        reset = EmFunction.specular()
        for t in sorted(set(self.state) - set(desired)):
            if self.state[t].fn != reset:
                commands.append(TileCommand(self._next_seq(), t, reset, self.configure(t, reset)))
        for cmd in commands:
            self.state[cmd.tile_id] = cmd
        return StepResult(commands, reports)

    def tile_functions(self) -> dict[int, EmFunction]:
        """Current tile state as the config map consumed by propagation.launch."""
        return {t: cmd.fn for t, cmd in sorted(self.state.items())}
