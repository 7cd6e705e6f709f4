"""Floorplan model, wall tessellation and exact 2D ray/segment queries.

All coordinates are plan-view meters.  A :class:`Floorplan` is immutable once
built, so every query here is pure.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .errors import ParseError, ValidationError

EPS = 1e-9
DEFAULT_TILE_SIZE = 0.5
DEFAULT_COLUMNS = 8
DEFAULT_FREQUENCY = 2.4e9
DEFAULT_TX_POWER_DBM = 20.0


class Point2D(NamedTuple):
    x: float
    y: float


def as_point(value: Iterable[float], field: str = "point") -> Point2D:
    try:
        x, y = (float(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError(field, f"expected [x, y], got {value!r}") from None
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(field, "coordinates must be finite")
    return Point2D(x, y)


class Role(str, Enum):
    TX = "TX"
    RX = "RX"
    EAVESDROPPER = "EAVESDROPPER"
    BLOCKED = "BLOCKED"
    IDLE = "IDLE"


@dataclass(frozen=True)
class Wall:
    id: int
    a: Point2D
    b: Point2D
    coated: bool = True

    def __post_init__(self):
        object.__setattr__(self, "a", Point2D(*map(float, self.a)))
        object.__setattr__(self, "b", Point2D(*map(float, self.b)))

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)


@dataclass(frozen=True)
class Tile:
    id: int
    wall_id: int
    center: Point2D
    tangent: tuple[float, float]
    normal: tuple[float, float]
    width: float
    partial: bool
    columns: int

    @property
    def start(self) -> Point2D:
        h = self.width / 2
        return Point2D(self.center.x - h * self.tangent[0], self.center.y - h * self.tangent[1])

    @property
    def end(self) -> Point2D:
        h = self.width / 2
        return Point2D(self.center.x + h * self.tangent[0], self.center.y + h * self.tangent[1])

    def local_angle(self, vec: Sequence[float]) -> float:
        """Angle of ``vec`` from the tile normal, positive toward the tangent."""
        return math.atan2(
            vec[0] * self.tangent[0] + vec[1] * self.tangent[1],
            vec[0] * self.normal[0] + vec[1] * self.normal[1],
        )

    def angle_to(self, p: Sequence[float]) -> float:
        return self.local_angle((p[0] - self.center.x, p[1] - self.center.y))

    def direction(self, angle: float) -> np.ndarray:
        """Unit vector leaving the front face at ``angle`` from the normal."""
        c, s = math.cos(angle), math.sin(angle)
        return np.array([
            c * self.normal[0] + s * self.tangent[0],
            c * self.normal[1] + s * self.tangent[1],
        ])

    def in_front(self, p: Sequence[float], eps: float = EPS) -> bool:
        return ((p[0] - self.center.x) * self.normal[0]
                + (p[1] - self.center.y) * self.normal[1]) > eps


@dataclass(frozen=True)
class Device:
    id: str
    position: Point2D
    role: Role
    tx_power_dbm: float = DEFAULT_TX_POWER_DBM
    frequency_hz: float = DEFAULT_FREQUENCY

    def __post_init__(self):
        object.__setattr__(self, "position", Point2D(*map(float, self.position)))
        object.__setattr__(self, "role", Role(self.role))


@dataclass(frozen=True)
class Hit:
    tile_id: int
    point: Point2D
    distance: float
    incidence_angle: float
    front: bool = True


def tessellate(
    wall: Wall,
    tile_size: float,
    columns_per_tile: int = DEFAULT_COLUMNS,
    *,
    interior_point: Optional[Sequence[float]] = None,
    first_id: int = 0,
) -> list[Tile]:
    """Split ``wall`` into tiles of ``tile_size`` ordered from ``a`` to ``b``.

    A remainder shorter than ``tile_size`` becomes one trailing tile flagged
    ``partial``.  Normals point toward ``interior_point`` when given, else to
    the left of the a->b direction.
    """
    if tile_size <= 0:
        raise ValueError("tile_size must be positive")
    length = wall.length
    if length <= 0:
        raise ValueError(f"wall {wall.id} has zero length")

    tx = (wall.b.x - wall.a.x) / length
    ty = (wall.b.y - wall.a.y) / length
    nx, ny = -ty, tx
    if interior_point is not None:
        side = (interior_point[0] - wall.a.x) * nx + (interior_point[1] - wall.a.y) * ny
        if side < 0:
            nx, ny = -nx, -ny

    n_full = math.floor(length / tile_size + EPS)
    widths = [tile_size] * n_full
    partial_idx = None
    remainder = length - n_full * tile_size
    if remainder > EPS:
        partial_idx = len(widths)
        widths.append(remainder)
    # absorb float drift into the last tile so widths sum to the wall length
    widths[-1] = length - sum(widths[:-1])

    tiles = []
    offset = 0.0
    for i, w in enumerate(widths):
        mid = offset + w / 2
        partial = i == partial_idx
        cols = max(1, round(columns_per_tile * w / tile_size)) if partial else columns_per_tile
        tiles.append(Tile(
            id=first_id + i,
            wall_id=wall.id,
            center=Point2D(wall.a.x + tx * mid, wall.a.y + ty * mid),
            tangent=(tx, ty),
            normal=(nx, ny),
            width=w,
            partial=partial,
            columns=cols,
        ))
        offset += w
    return tiles


@dataclass(frozen=True)
class Floorplan:
    walls: tuple[Wall, ...]
    tiles: tuple[Tile, ...]
    devices: tuple[Device, ...]
    tile_size: float = DEFAULT_TILE_SIZE
    columns_per_tile: int = DEFAULT_COLUMNS
    interior_point: Optional[Point2D] = None
    tile_links: tuple[tuple[int, int], ...] = ()

    @classmethod
    def build(
        cls,
        walls: Sequence[Wall],
        devices: Sequence[Device] = (),
        tile_size: float = DEFAULT_TILE_SIZE,
        columns_per_tile: int = DEFAULT_COLUMNS,
        interior_point: Optional[Sequence[float]] = None,
        tile_links: Sequence[tuple[int, int]] = (),
    ) -> "Floorplan":
        """Validate inputs and tessellate every wall.  Tile ids follow wall order."""
        if not tile_size > 0:
            raise ValidationError("tile_size", "must be > 0")
        if columns_per_tile < 1:
            raise ValidationError("columns_per_tile", "must be >= 1")
        seen: set[int] = set()
        for i, w in enumerate(walls):
            if w.id in seen:
                raise ValidationError(f"walls[{i}].id", f"duplicate wall id {w.id}")
            seen.add(w.id)
            if w.length <= EPS:
                raise ValidationError(f"walls[{i}]", "wall has zero length")
        ip = None if interior_point is None else Point2D(*interior_point)

        tiles: list[Tile] = []
        for w in walls:
            tiles.extend(tessellate(w, tile_size, columns_per_tile,
                                    interior_point=ip, first_id=len(tiles)))

        dev_ids: set[str] = set()
        for i, d in enumerate(devices):
            if d.id in dev_ids:
                raise ValidationError(f"devices[{i}].id", f"duplicate device id {d.id!r}")
            dev_ids.add(d.id)
            if not d.frequency_hz > 0:
                raise ValidationError(f"devices[{i}].frequency_hz", "must be > 0")
            for w in walls:
                if point_segment_distance(d.position, w.a, w.b) <= EPS:
                    raise ValidationError(f"devices[{i}].position",
                                          f"lies on wall {w.id}")

        n_tiles = len(tiles)
        for i, (u, v) in enumerate(tile_links):
            if not (0 <= u < n_tiles and 0 <= v < n_tiles) or u == v:
                raise ValidationError(f"tile_links[{i}]", f"invalid link {u}-{v}")

        return cls(tuple(walls), tuple(tiles), tuple(devices), float(tile_size),
                   int(columns_per_tile), ip, tuple((int(u), int(v)) for u, v in tile_links))

    @cached_property
    def _wall_index(self) -> dict[int, Wall]:
        return {w.id: w for w in self.walls}

    @cached_property
    def _device_index(self) -> dict[str, Device]:
        return {d.id: d for d in self.devices}

    def wall(self, wall_id: int) -> Wall:
        return self._wall_index[wall_id]

    def tile(self, tile_id: int) -> Tile:
        return self.tiles[tile_id]

    def device(self, device_id: str) -> Device:
        return self._device_index[device_id]

    def is_coated(self, tile_id: int) -> bool:
        return self.wall(self.tiles[tile_id].wall_id).coated

    @property
    def frequency(self) -> float:
        """Operating frequency of the scenario: that of the first TX, else of any device."""
        for d in self.devices:
            if d.role is Role.TX:
                return d.frequency_hz
        return self.devices[0].frequency_hz if self.devices else DEFAULT_FREQUENCY

    def wall_tiles(self, wall_id: int) -> list[Tile]:
        return [t for t in self.tiles if t.wall_id == wall_id]

    @cached_property
    def tile_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(start, start->end vector, normal, tangent) as (T, 2) arrays."""
        if not self.tiles:
            z = np.zeros((0, 2))
            return z, z, z, z
        start = np.array([t.start for t in self.tiles], dtype=float)
        end = np.array([t.end for t in self.tiles], dtype=float)
        normal = np.array([t.normal for t in self.tiles], dtype=float)
        tangent = np.array([t.tangent for t in self.tiles], dtype=float)
        return start, end - start, normal, tangent

    @cached_property
    def wall_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(a, b, ids) of all walls."""
        if not self.walls:
            return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=int)
        a = np.array([w.a for w in self.walls], dtype=float)
        b = np.array([w.b for w in self.walls], dtype=float)
        ids = np.array([w.id for w in self.walls], dtype=int)
        return a, b, ids


def _cross(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


def trace_rays(
    origins: np.ndarray,
    directions: np.ndarray,
    plan: Floorplan,
    exclude: Optional[np.ndarray] = None,
    eps: float = EPS,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched nearest-tile query.

    Returns ``(tile_index, distance)`` per ray; index -1 and distance inf mean
    no hit.  ``exclude`` holds one tile index per ray (-1 for none).
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    n_rays = origins.shape[0]
    start, seg, _, _ = plan.tile_arrays
    if len(start) == 0 or n_rays == 0:
        return np.full(n_rays, -1), np.full(n_rays, np.inf)

    w = start[None, :, :] - origins[:, None, :]
    d = directions[:, None, :]
    denom = _cross(d, seg[None, :, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = _cross(w, seg[None, :, :]) / denom
        s = _cross(w, d) / denom
    ok = (np.abs(denom) > 1e-15) & (t > eps) & (s >= 0.0) & (s <= 1.0)
    if exclude is not None:
        exclude = np.asarray(exclude)
        ok &= np.arange(len(start))[None, :] != exclude[:, None]
    t = np.where(ok, t, np.inf)
    idx = np.argmin(t, axis=1)
    dist = t[np.arange(n_rays), idx]
    idx = np.where(np.isfinite(dist), idx, -1)
    return idx, dist


def trace_ray(
    origin: Sequence[float],
    direction: Sequence[float],
    plan: Floorplan,
    exclude: Optional[int] = None,
    eps: float = EPS,
) -> Optional[Hit]:
    """Nearest tile hit strictly ahead of ``origin``, or None.

    Back-face hits are returned with ``front=False``; the caller decides what
    to do with them (propagation treats them as absorbing).
    """
    d = np.asarray(direction, dtype=float)
    if abs(math.hypot(d[0], d[1]) - 1.0) > 1e-6:
        raise ValueError("direction must be a unit vector")
    idx, dist = trace_rays(np.asarray([origin], dtype=float), d[None, :], plan,
                           None if exclude is None else np.array([exclude]), eps)
    if idx[0] < 0:
        return None
    return make_hit(plan.tiles[int(idx[0])], origin, d, float(dist[0]))


def make_hit(tile: Tile, origin: Sequence[float], direction: Sequence[float], distance: float) -> Hit:
    """Hit record for a ray from ``origin`` reaching ``tile`` after ``distance``."""
    dx, dy = float(direction[0]), float(direction[1])
    px = float(origin[0]) + distance * dx
    py = float(origin[1]) + distance * dy
    cos_n = -(dx * tile.normal[0] + dy * tile.normal[1])
    sin_t = -(dx * tile.tangent[0] + dy * tile.tangent[1])
    front = cos_n > 0
    angle = math.atan2(sin_t, cos_n if front else -cos_n)
    return Hit(tile.id, Point2D(px, py), float(distance), angle, bool(front))


def point_segment_distance(p: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float:
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay
    ll = ex * ex + ey * ey
    if ll == 0:
        return math.hypot(p[0] - ax, p[1] - ay)
    u = ((p[0] - ax) * ex + (p[1] - ay) * ey) / ll
    u = min(1.0, max(0.0, u))
    return math.hypot(p[0] - (ax + u * ex), p[1] - (ay + u * ey))


def _points_to_segments(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    e = b - a
    ll = np.einsum("ij,ij->i", e, e)
    u = np.einsum("ij,ij->i", p - a, e) / np.where(ll > 0, ll, 1.0)
    u = np.clip(u, 0.0, 1.0)
    closest = a + u[:, None] * e
    return np.hypot(*(p - closest).T)


def segment_wall_distances(p: Sequence[float], q: Sequence[float], plan: Floorplan) -> np.ndarray:
    """Minimum distance between segment pq and each wall (0 when they cross)."""
    a, b, _ = plan.wall_arrays
    if len(a) == 0:
        return np.zeros(0)
    p = np.broadcast_to(np.asarray(p, dtype=float), a.shape)
    q = np.broadcast_to(np.asarray(q, dtype=float), a.shape)
    o1 = _cross(q - p, a - p)
    o2 = _cross(q - p, b - p)
    o3 = _cross(b - a, p - a)
    o4 = _cross(b - a, q - a)
    crossing = (o1 * o2 < 0) & (o3 * o4 < 0)
    dist = np.minimum.reduce([
        _points_to_segments(p, a, b),
        _points_to_segments(q, a, b),
        _points_to_segments(a, p, q),
        _points_to_segments(b, p, q),
    ])
    return np.where(crossing, 0.0, dist)


def line_of_sight(
    p: Sequence[float],
    q: Sequence[float],
    plan: Floorplan,
    exclude_walls: Iterable[int] = (),
    eps: float = EPS,
) -> bool:
    """True iff segment pq clears every wall by more than ``eps``.

    ``exclude_walls`` skips walls a segment legitimately starts or ends on
    (a tile's own wall).
    """
    dist = segment_wall_distances(p, q, plan)
    if len(dist) == 0:
        return True
    excluded = set(exclude_walls)
    if excluded:
        keep = np.array([wid not in excluded for wid in plan.wall_arrays[2]])
        dist = dist[keep]
    return bool(np.all(dist > eps))


_TOP_KEYS = {"tile_size", "columns_per_tile", "interior_point", "walls", "devices",
             "objectives", "tile_links"}
_WALL_KEYS = {"id", "a", "b", "coated"}
_DEVICE_KEYS = {"id", "position", "role", "tx_power_dbm", "frequency_hz"}


def _reject_unknown(obj: dict, allowed: set[str], where: str) -> None:
    extra = sorted(set(obj) - allowed)
    if extra:
        raise ValidationError(f"{where}{extra[0]}" if where else extra[0], "unknown field")


def _number(value: Any, field: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(field, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise ValidationError(field, "must be finite")
    return float(value)


def read_scenario(path: str | Path) -> dict:
    """Read a scenario file as a JSON object (no validation)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a JSON object")
    return data


def floorplan_from_dict(data: dict) -> Floorplan:
    _reject_unknown(data, _TOP_KEYS, "")
    tile_size = _number(data.get("tile_size", DEFAULT_TILE_SIZE), "tile_size")
    columns = data.get("columns_per_tile", DEFAULT_COLUMNS)
    if isinstance(columns, bool) or not isinstance(columns, int):
        raise ValidationError("columns_per_tile", "expected an integer")
    interior = data.get("interior_point")
    interior = None if interior is None else as_point(interior, "interior_point")

    walls_raw = data.get("walls", [])
    if not isinstance(walls_raw, list):
        raise ValidationError("walls", "expected a list")
    walls = []
    for i, w in enumerate(walls_raw):
        where = f"walls[{i}]"
        if not isinstance(w, dict):
            raise ValidationError(where, "expected an object")
        _reject_unknown(w, _WALL_KEYS, where + ".")
        for key in ("id", "a", "b"):
            if key not in w:
                raise ValidationError(f"{where}.{key}", "missing")
        if isinstance(w["id"], bool) or not isinstance(w["id"], int):
            raise ValidationError(f"{where}.id", "expected an integer")
        coated = w.get("coated", True)
        if not isinstance(coated, bool):
            raise ValidationError(f"{where}.coated", "expected a boolean")
        walls.append(Wall(w["id"], as_point(w["a"], f"{where}.a"),
                          as_point(w["b"], f"{where}.b"), coated))

    devices_raw = data.get("devices", [])
    if not isinstance(devices_raw, list):
        raise ValidationError("devices", "expected a list")
    devices = []
    for i, d in enumerate(devices_raw):
        where = f"devices[{i}]"
        if not isinstance(d, dict):
            raise ValidationError(where, "expected an object")
        _reject_unknown(d, _DEVICE_KEYS, where + ".")
        for key in ("id", "position", "role"):
            if key not in d:
                raise ValidationError(f"{where}.{key}", "missing")
        if not isinstance(d["id"], str) or not d["id"]:
            raise ValidationError(f"{where}.id", "expected a non-empty string")
        try:
            role = Role(d["role"])
        except ValueError:
            raise ValidationError(f"{where}.role", f"unknown role {d['role']!r}") from None
        devices.append(Device(
            d["id"],
            as_point(d["position"], f"{where}.position"),
            role,
            _number(d.get("tx_power_dbm", DEFAULT_TX_POWER_DBM), f"{where}.tx_power_dbm"),
            _number(d.get("frequency_hz", DEFAULT_FREQUENCY), f"{where}.frequency_hz"),
        ))

    links_raw = data.get("tile_links", [])
    links = []
    for i, link in enumerate(links_raw):
        if (not isinstance(link, list) or len(link) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in link)):
            raise ValidationError(f"tile_links[{i}]", "expected [tile_id, tile_id]")
        links.append((link[0], link[1]))

    return Floorplan.build(walls, devices, tile_size, columns, interior, links)


def load_scenario(path: str | Path) -> Floorplan:
    """Load, validate and tessellate a scenario file."""
    return floorplan_from_dict(read_scenario(path))
