"""Ray-launching multipath engine.

Tiles are modelled as ideal re-collimators: a path's free-space loss is the
Friis loss over its unfolded total length, and each tile interaction
multiplies the linear gain by that tile's efficiency.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import BackFaceHit
from .geometry import EPS, Device, Floorplan, Hit, Point2D, Tile, make_hit, trace_rays

C = 299_792_458.0
D_MIN = 0.1
CAPTURE_RADIUS = 0.05
N_RAYS = 3600
STEER_ACCEPTANCE = math.radians(10.0)
REFLECTION_PHASE = math.pi
EXHAUSTIVE_ALIGN_LIMIT = 2 ** 20


class FnKind(str, Enum):
    SPECULAR = "SPECULAR"
    STEER = "STEER"
    ABSORB = "ABSORB"
    FOCUS = "FOCUS"


DEFAULT_EFFICIENCY = {
    FnKind.SPECULAR: 0.7,
    FnKind.STEER: 0.8,
    FnKind.FOCUS: 0.8,
    FnKind.ABSORB: 0.01,
}


@dataclass(frozen=True)
class EmFunction:
    """Interaction commanded on one tile.

    Angles are radians from the tile normal, positive toward the tangent.
    ``incident_angle`` is the direction the wave arrives *from*.
    """

    kind: FnKind
    incident_angle: float = 0.0
    target_angle: float = 0.0
    focus: Optional[Point2D] = None
    efficiency: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", FnKind(self.kind))
        if self.efficiency is None:
            object.__setattr__(self, "efficiency", DEFAULT_EFFICIENCY[self.kind])
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("efficiency must lie in [0, 1]")
        if self.kind is FnKind.STEER and not abs(self.target_angle) < math.pi / 2:
            raise ValueError("STEER target angle must lie in (-pi/2, pi/2)")
        if self.kind is FnKind.FOCUS:
            if self.focus is None:
                raise ValueError("FOCUS needs a focus point")
            object.__setattr__(self, "focus", Point2D(*self.focus))

    @classmethod
    def specular(cls, efficiency: Optional[float] = None) -> "EmFunction":
        return cls(FnKind.SPECULAR, efficiency=efficiency)

    @classmethod
    def steer(cls, incident: float, target: float, efficiency: Optional[float] = None) -> "EmFunction":
        return cls(FnKind.STEER, incident, target, efficiency=efficiency)

    @classmethod
    def absorb(cls, efficiency: Optional[float] = None) -> "EmFunction":
        return cls(FnKind.ABSORB, efficiency=efficiency)

    @classmethod
    def focus_on(cls, point: Sequence[float], incident: float = 0.0,
                 efficiency: Optional[float] = None) -> "EmFunction":
        return cls(FnKind.FOCUS, incident, focus=Point2D(*point), efficiency=efficiency)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "efficiency": self.efficiency}
        if self.kind is FnKind.STEER:
            out["incident_angle"] = self.incident_angle
            out["target_angle"] = self.target_angle
        if self.kind is FnKind.FOCUS:
            out["incident_angle"] = self.incident_angle
            out["focus"] = list(self.focus)
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "EmFunction":
        return cls(FnKind(data["kind"]), data.get("incident_angle", 0.0),
                   data.get("target_angle", 0.0),
                   None if data.get("focus") is None else Point2D(*data["focus"]),
                   data.get("efficiency"))


SPECULAR = EmFunction.specular()


@dataclass(frozen=True)
class Outgoing:
    origin: Point2D
    direction: tuple[float, float]
    gain_factor: float
    phase_shift: float


@dataclass(frozen=True)
class PropPath:
    hops: tuple[int, ...]
    segment_lengths: tuple[float, ...]
    total_length: float
    gain: float
    phase: float
    delay: float

    def to_dict(self) -> dict:
        return {
            "hops": list(self.hops),
            "segment_lengths": list(self.segment_lengths),
            "total_length": self.total_length,
            "gain": self.gain,
            "phase": self.phase,
            "delay": self.delay,
        }


@dataclass(frozen=True)
class ReceivedPower:
    coherent: float
    incoherent: float


@dataclass(frozen=True)
class Pdp:
    taps: tuple[tuple[float, float], ...]
    paths: tuple[PropPath, ...] = field(default=(), repr=False)

    def to_csv(self) -> str:
        lines = ["delay_s,power_w"]
        lines += [f"{d!r},{p!r}" for d, p in self.taps]
        return "\n".join(lines) + "\n"


def free_space_loss(d: float, f: float, d_min: float = D_MIN) -> float:
    """Friis free-space loss in dB; distances below ``d_min`` are clamped."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    d = max(d, d_min)
    return 20.0 * math.log10(4.0 * math.pi * d * f / C)


def free_space_gain(d: float, f: float) -> float:
    # capped at 1: below ~lambda/(4 pi) the far-field formula would create energy
    return min(1.0, 10.0 ** (-free_space_loss(d, f) / 10.0))


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watts_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0 if w > 0 else -math.inf


def interact(
    tile: Tile,
    fn: EmFunction,
    incident: Hit,
    *,
    acceptance: float = STEER_ACCEPTANCE,
    phase_shift: float = REFLECTION_PHASE,
) -> Optional[Outgoing]:
    """Outgoing ray produced by ``fn`` for a wave hitting ``tile``.

    STEER only acts on arrivals within ``acceptance`` of its configured
    incident angle; outside the window the tile reflects specularly.  FOCUS
    returns None when the focal point lies behind the tile.
    """
    if incident.tile_id != tile.id:
        raise ValueError(f"hit on tile {incident.tile_id} passed to tile {tile.id}")
    if not incident.front:
        raise BackFaceHit(f"back-face hit on tile {tile.id}")

    theta = incident.incidence_angle
    if fn.kind is FnKind.FOCUS:
        vx = fn.focus.x - incident.point.x
        vy = fn.focus.y - incident.point.y
        norm = math.hypot(vx, vy)
        if norm <= EPS or vx * tile.normal[0] + vy * tile.normal[1] <= EPS:
            return None
        return Outgoing(incident.point, (vx / norm, vy / norm), fn.efficiency, phase_shift)

    if fn.kind is FnKind.STEER and abs(theta - fn.incident_angle) <= acceptance:
        out, gain = fn.target_angle, fn.efficiency
    elif fn.kind is FnKind.STEER:
        out, gain = -theta, DEFAULT_EFFICIENCY[FnKind.SPECULAR]
    else:
        out, gain = -theta, fn.efficiency
    c, s = math.cos(out), math.sin(out)
    direction = (c * tile.normal[0] + s * tile.tangent[0], c * tile.normal[1] + s * tile.tangent[1])
    return Outgoing(incident.point, direction, gain, phase_shift)


def _fan(n_rays: int) -> np.ndarray:
    angles = 2.0 * np.pi * np.arange(n_rays) / n_rays
    return np.stack([np.cos(angles), np.sin(angles)], axis=1)


def launch(
    tx: Device,
    plan: Floorplan,
    config: Mapping[int, EmFunction] | None = None,
    max_bounces: int = 3,
    n_rays: int = N_RAYS,
    *,
    capture_radius: float = CAPTURE_RADIUS,
    acceptance: float = STEER_ACCEPTANCE,
    phase_shift: float = REFLECTION_PHASE,
) -> dict[str, list[PropPath]]:
    """Trace a uniform ray fan from ``tx`` and collect paths per receiving device.

    Tiles absent from ``config`` reflect specularly.  A ray segment credits
    every device it passes within ``capture_radius`` of; among rays sharing a
    hop sequence the shortest unfolded length is kept.  Result lists are
    ordered by delay, then hop sequence.
    """
    if max_bounces < 0 or n_rays < 1:
        raise ValueError("need max_bounces >= 0 and n_rays >= 1")
    config = dict(config or {})
    for tid in config:
        if not plan.is_coated(tid):
            raise ValueError(f"tile {tid} sits on an uncoated wall and cannot be configured")

    f = tx.frequency_hz
    receivers = [d for d in plan.devices if d.id != tx.id]
    if not receivers:
        return {}
    rx_pos = np.array([d.position for d in receivers], dtype=float)

    dirs = _fan(n_rays)
    origins = np.tile(np.asarray(tx.position, dtype=float), (n_rays, 1))
    exclude = np.full(n_rays, -1)
    hops: list[list[int]] = [[] for _ in range(n_rays)]
    seglens: list[list[float]] = [[] for _ in range(n_rays)]
    factor = np.ones(n_rays)
    shift = np.zeros(n_rays)
    alive = np.arange(n_rays)

    best: dict[tuple[str, tuple[int, ...]], tuple[float, tuple[float, ...], float, float]] = {}

    for bounce in range(max_bounces + 1):
        if len(alive) == 0:
            break
        o = origins[alive]
        d = dirs[alive]
        idx, dist = trace_rays(o, d, plan, exclude[alive])

        rel = rx_pos[None, :, :] - o[:, None, :]
        tau = np.einsum("rdk,rk->rd", rel, d)
        lateral = np.linalg.norm(rel - tau[:, :, None] * d[:, None, :], axis=2)
        captured = (tau > EPS) & (tau < dist[:, None]) & (lateral <= capture_radius)
        for ai, di in zip(*np.nonzero(captured)):
            ray = alive[ai]
            last = float(np.hypot(*rel[ai, di]))
            segs = tuple(seglens[ray]) + (last,)
            total = math.fsum(segs)
            key = (receivers[di].id, tuple(hops[ray]))
            prev = best.get(key)
            if prev is None or total < prev[0]:
                best[key] = (total, segs, float(factor[ray]), float(shift[ray]))

        if bounce == max_bounces:
            break
        survivors = []
        for ai, ray in enumerate(alive):
            ti = int(idx[ai])
            if ti < 0:
                continue
            tile = plan.tiles[ti]
            hit = make_hit(tile, o[ai], d[ai], float(dist[ai]))
            if not hit.front:
                continue  # one-sided walls: the back face absorbs
            out = interact(tile, config.get(ti, SPECULAR), hit,
                           acceptance=acceptance, phase_shift=phase_shift)
            if out is None:
                continue
            origins[ray] = out.origin
            dirs[ray] = out.direction
            exclude[ray] = ti
            hops[ray].append(ti)
            seglens[ray].append(float(dist[ai]))
            factor[ray] *= out.gain_factor
            shift[ray] += out.phase_shift
            survivors.append(ray)
        alive = np.array(survivors, dtype=int)

    result: dict[str, list[PropPath]] = {d.id: [] for d in receivers}
    for (dev_id, hop_seq), (total, segs, fac, sh) in best.items():
        delay = total / C
        phase = (-2.0 * math.pi * f * delay + sh) % (2.0 * math.pi)
        gain = free_space_gain(total, f) * fac
        result[dev_id].append(PropPath(hop_seq, segs, total, gain, phase, delay))
    for paths in result.values():
        paths.sort(key=lambda p: (p.delay, p.hops))
    return result


def illuminated_tiles(
    tx: Device,
    plan: Floorplan,
    n_rays: int = N_RAYS,
) -> dict[int, float]:
    """First-hit power (dBm) per tile front-lit by a ray fan from ``tx``."""
    dirs = _fan(n_rays)
    origins = np.tile(np.asarray(tx.position, dtype=float), (n_rays, 1))
    idx, dist = trace_rays(origins, dirs, plan)
    power: dict[int, float] = {}
    for i in np.nonzero(idx >= 0)[0]:
        tile = plan.tiles[int(idx[i])]
        if not make_hit(tile, origins[i], dirs[i], float(dist[i])).front:
            continue
        p = tx.tx_power_dbm - free_space_loss(float(dist[i]), tx.frequency_hz)
        if p > power.get(tile.id, -math.inf):
            power[tile.id] = p
    return dict(sorted(power.items()))


def _phasors(paths: Sequence[PropPath]) -> np.ndarray:
    return np.array([math.sqrt(p.gain) * cmath.exp(1j * p.phase) for p in paths], dtype=complex)


def coherent_gain(paths: Sequence[PropPath], offsets: Optional[Mapping[int, float]] = None) -> float:
    """|sum sqrt(g_k) exp(i(phi_k + o_k))|^2 as a linear power fraction."""
    if not paths:
        return 0.0
    v = _phasors(paths)
    if offsets:
        v = v * np.exp(1j * np.array([offsets.get(k, 0.0) for k in range(len(paths))]))
    return float(abs(v.sum()) ** 2)


def received_power(
    paths: Sequence[PropPath],
    tx_power: float,
    offsets: Optional[Mapping[int, float]] = None,
) -> ReceivedPower:
    """Coherent (narrowband phasor sum) and incoherent received power in dBm.

    An empty path list yields -inf for both.
    """
    if not paths:
        return ReceivedPower(-math.inf, -math.inf)
    p_tx = dbm_to_watts(tx_power)
    incoherent = p_tx * math.fsum(p.gain for p in paths)
    coherent = p_tx * coherent_gain(paths, offsets)
    # a full cancellation leaves float residue ~1e-32 of the path power
    if coherent <= incoherent * 1e-20:
        coherent = 0.0
    return ReceivedPower(watts_to_dbm(coherent), watts_to_dbm(incoherent))


def pdp(paths: Sequence[PropPath], tx_power: float) -> Pdp:
    p_tx = dbm_to_watts(tx_power)
    ordered = sorted(paths, key=lambda p: (p.delay, p.hops))
    return Pdp(tuple((p.delay, p_tx * p.gain) for p in ordered), tuple(ordered))


def rms_delay_spread(profile: Pdp) -> float:
    if not profile.taps:
        return 0.0
    tau = np.array([t for t, _ in profile.taps])
    pw = np.array([p for _, p in profile.taps])
    total = pw.sum()
    if total <= 0:
        return 0.0
    mean = (pw * tau).sum() / total
    var = (pw * tau ** 2).sum() / total - mean ** 2
    return math.sqrt(max(var, 0.0))


def _align_exhaustive(v: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    k, m = len(v), len(allowed)
    rot = np.exp(1j * allowed)
    total = m ** k
    weights = m ** np.arange(k - 1, -1, -1)
    best_val, best_idx = -1.0, 0
    chunk = 1 << 16
    for lo in range(0, total, chunk):
        codes = np.arange(lo, min(total, lo + chunk))
        digits = (codes[:, None] // weights[None, :]) % m
        val = np.abs((v[None, :] * rot[digits]).sum(axis=1)) ** 2
        top = val.max()
        # ties (within float noise) resolve to the lexicographically first choice
        if top > best_val * (1 + 1e-12):
            best_val = top
            best_idx = int(codes[np.argmax(val >= top * (1 - 1e-12))])
    return (best_idx // weights) % m


def _align_greedy(v: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    rot = np.exp(1j * allowed)
    choice = np.zeros(len(v), dtype=int)
    order = sorted(range(len(v)), key=lambda i: (-abs(v[i]), i))
    acc = 0j
    for i in order:
        mags = np.abs(acc + v[i] * rot)
        j = int(np.argmax(mags >= mags.max() * (1 - 1e-12)))
        choice[i] = j
        acc += v[i] * rot[j]
    return choice


def align_phases(
    paths: Sequence[PropPath],
    offsets_allowed: Sequence[float] = (0.0, math.pi),
    method: str = "auto",
) -> dict[int, float]:
    """Pick one phase offset per path to maximise the coherent sum.

    ``method`` is ``"exhaustive"``, ``"greedy"`` or ``"auto"`` (exhaustive up
    to 2**20 combinations).  The result never does worse than all-zero offsets.
    """
    if not paths:
        raise ValueError("align_phases needs at least one path")
    allowed = sorted(float(o) for o in set(offsets_allowed))
    allowed.sort(key=lambda o: (o != 0.0, o))
    allowed_arr = np.array(allowed)
    v = _phasors(paths)
    k = len(paths)

    if method == "auto":
        method = "exhaustive" if len(allowed) ** k <= EXHAUSTIVE_ALIGN_LIMIT else "greedy"
    if method == "exhaustive":
        choice = _align_exhaustive(v, allowed_arr)
    elif method == "greedy":
        choice = _align_greedy(v, allowed_arr)
    else:
        raise ValueError(f"unknown method {method!r}")

    offsets = {i: float(allowed_arr[c]) for i, c in enumerate(choice)}
    if 0.0 in allowed:
        zero = {i: 0.0 for i in range(k)}
        if coherent_gain(paths, zero) > coherent_gain(paths, offsets):
            offsets = zero
    return offsets
