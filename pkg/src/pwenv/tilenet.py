"""Simulated wired gateway network inside one coated object.

Commands enter at the object's representative tile and are flooded down a
breadth-first spanning tree in synchronous rounds; acknowledgements are
aggregated back up the same tree as bitmaps of tile ids.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence, Union

from .controller import TileCommand
from .emcompiler import SwitchConfig
from .errors import EmptyObject, PartitionError

BROADCAST = "*"

Topology = Mapping[int, Sequence[int]]


class FrameType(str, Enum):
    SET = "SET"
    ACK = "ACK"


@dataclass(frozen=True)
class Frame:
    type: FrameType
    seq: int
    origin: int
    target: Union[int, str]
    payload: Union[TileCommand, int, None] = None  # TileCommand for SET, ack bitmap for ACK

    def to_json(self) -> str:
        if self.type is FrameType.SET:
            payload = self.payload.to_dict() if self.payload is not None else {}
        else:
            payload = {"bitmap": format(self.payload or 0, "x"),
                       "acked": bitmap_ids(self.payload or 0)}
        return json.dumps({"type": self.type.value, "seq": self.seq, "origin": self.origin,
                           "target": self.target, "payload": payload}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "Frame":
        d = json.loads(line)
        ftype = FrameType(d["type"])
        if ftype is FrameType.SET:
            payload = TileCommand.from_dict(d["payload"]) if d["payload"] else None
        else:
            payload = int(d["payload"]["bitmap"], 16)
        return cls(ftype, int(d["seq"]), int(d["origin"]), d["target"], payload)


def bitmap_ids(bitmap: int) -> list[int]:
    out, i = [], 0
    while bitmap:
        if bitmap & 1:
            out.append(i)
        bitmap >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class TileNode:
    tile_id: int
    neighbors: tuple[int, ...] = ()
    state: Optional[SwitchConfig] = None
    last_seq: int = 0
    seen: frozenset = field(default=frozenset(), repr=False)


def elect_representative(tiles: Iterable[int]) -> int:
    tiles = list(tiles)
    if not tiles:
        raise EmptyObject("cannot elect a representative of an empty object")
    return min(tiles)


def chain_topology(tile_ids: Sequence[int]) -> dict[int, list[int]]:
    """Wired links between consecutive tiles of one wall."""
    ids = list(tile_ids)
    topo = {t: [] for t in ids}
    for a, b in zip(ids, ids[1:]):
        topo[a].append(b)
        topo[b].append(a)
    return topo


def topology_from_links(tile_ids: Iterable[int], links: Iterable[tuple[int, int]]) -> dict[int, list[int]]:
    topo = {t: [] for t in tile_ids}
    for a, b in links:
        if a in topo and b in topo and b not in topo[a]:
            topo[a].append(b)
            topo[b].append(a)
    return {t: sorted(n) for t, n in topo.items()}


def bfs_tree(rep: int, topology: Topology) -> tuple[dict[int, int], dict[int, Optional[int]], dict[int, list[int]]]:
    """(depth, parent, children) of the BFS spanning tree; neighbours visited in id order."""
    depth = {rep: 0}
    parent: dict[int, Optional[int]] = {rep: None}
    children: dict[int, list[int]] = {rep: []}
    queue = deque([rep])
    while queue:
        u = queue.popleft()
        for v in sorted(topology.get(u, ())):
            if v not in depth:
                depth[v] = depth[u] + 1
                parent[v] = u
                children[u].append(v)
                children[v] = []
                queue.append(v)
    return depth, parent, children


def apply_frame(
    node: TileNode,
    frame: Frame,
    children: Sequence[int] = (),
    parent: Optional[int] = None,
) -> tuple[TileNode, list[tuple[Optional[int], Frame]]]:
    """Process one frame at ``node``; returns the new node and ``(next_hop, frame)`` pairs.

    A SET is forwarded once to each spanning-tree child.  If it is aimed at
    this tile (or broadcast) and its seq is newer than ``last_seq`` it is
    applied and one ACK goes to ``parent`` (None at the representative).
    ACK frames are aggregated by the caller and leave the node untouched.
    """
    if frame.type is FrameType.ACK or frame.seq in node.seen:
        return node, []
    node = replace(node, seen=node.seen | {frame.seq})
    out: list[tuple[Optional[int], Frame]] = [
        (c, replace(frame, origin=node.tile_id)) for c in children]
    addressed = frame.target == BROADCAST or frame.target == node.tile_id
    if addressed and frame.seq > node.last_seq:
        cfg = frame.payload.config if isinstance(frame.payload, TileCommand) else None
        node = replace(node, state=cfg, last_seq=frame.seq)
        ack_target = node.tile_id if parent is None else parent
        out.append((parent, Frame(FrameType.ACK, frame.seq, node.tile_id, ack_target,
                                  1 << node.tile_id)))
    return node, out


@dataclass
class Dissemination:
    delivery: dict[int, int]
    acks_complete: bool
    rounds: int
    nodes: dict[int, TileNode]
    trace: list[tuple[int, int, Frame]]  # (round, receiving tile, frame)
    acked: dict[int, int]

    def trace_lines(self) -> list[str]:
        return [json.dumps({"round": r, "to": to, "frame": json.loads(f.to_json())}, sort_keys=True)
                for r, to, f in self.trace]


def disseminate(
    rep: int,
    cmds: Sequence[TileCommand],
    topology: Topology,
    *,
    broadcast: bool = False,
    nodes: Optional[Mapping[int, TileNode]] = None,
) -> Dissemination:
    """Flood ``cmds`` from ``rep`` over a BFS tree and convergecast the ACKs.

    Round r delivers SET frames to depth r; ACKs climb one level per round
    afterwards, so a full exchange takes ``2 * eccentricity(rep)`` rounds.
    With ``broadcast`` every command is addressed to all tiles.
    """
    depth, parent, children = bfs_tree(rep, topology)
    if not broadcast:
        missing = sorted({c.tile_id for c in cmds} - set(depth))
        if missing:
            raise PartitionError(f"tiles {missing} unreachable from representative {rep}")
    ecc = max(depth.values())
    state = {t: (nodes[t] if nodes and t in nodes
                 else TileNode(t, tuple(sorted(topology.get(t, ())))))
             for t in sorted(depth)}
    trace: list[tuple[int, int, Frame]] = []

    # per node: seq -> aggregated ack bitmap of its subtree
    pending: dict[int, dict[int, int]] = {t: {} for t in state}

    def deliver(t: int, frame: Frame) -> list[tuple[int, Frame]]:
        state[t], out = apply_frame(state[t], frame, children[t], parent[t])
        sends = []
        for hop, f in out:
            if f.type is FrameType.ACK:
                pending[t][f.seq] = pending[t].get(f.seq, 0) | f.payload
            else:
                sends.append((hop, f))
        return sends

    # round 0: the representative takes the commands from the controller
    inbox: list[tuple[int, Frame]] = []
    for cmd in cmds:
        target = BROADCAST if broadcast else cmd.tile_id
        inbox.extend(deliver(rep, Frame(FrameType.SET, cmd.seq, rep, target, cmd)))

    for rnd in range(1, ecc + 1):
        nxt = []
        for t, frame in inbox:
            trace.append((rnd, t, frame))
            nxt.extend(deliver(t, frame))
        inbox = nxt

    # convergecast: nodes at depth ecc - j + 1 report to their parents in round ecc + j
    for j in range(1, ecc + 1):
        level = ecc - j + 1
        for t in sorted(n for n, d in depth.items() if d == level):
            p = parent[t]
            for seq, bitmap in sorted(pending[t].items()):
                ack = Frame(FrameType.ACK, seq, t, p, bitmap)
                trace.append((ecc + j, p, ack))
                pending[p][seq] = pending[p].get(seq, 0) | bitmap

    acked = dict(sorted(pending[rep].items()))
    complete = True
    for cmd in cmds:
        want = 0
        if broadcast:
            for t in state:
                want |= 1 << t
        else:
            want = 1 << cmd.tile_id
        if acked.get(cmd.seq, 0) & want != want:
            complete = False
    return Dissemination(dict(sorted(depth.items())), complete, 2 * ecc, state, trace, acked)

