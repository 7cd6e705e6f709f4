"""Electromagnetic compiler: EmFunction requests -> meta-atom switch states.

Each tile is a linear array of ``N`` meta-atom columns with two switches per
column: an on/off amplitude bit and a 0/pi phase bit.  The bit-string layout
is ``a_0..a_{N-1} p_0..p_{N-1}``.  Reflection is scored with a far-field
array factor evaluated on a 1 degree grid over (-90, 90) degrees.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BudgetTooSmall, ParseError
from .geometry import DEFAULT_FREQUENCY, Tile
from .propagation import C, EmFunction, FnKind

GRID_DEG = np.arange(-89, 90)
GRID = np.deg2rad(GRID_DEG)
EPS_Q = 1e-12
TABLE_BIN_DEG = 5
POPULATION = 32
TOURNAMENT = 2
CROSSOVER_P = 0.9
ELITES = 2
_TIE = 1e-12


@dataclass(frozen=True)
class TileModel:
    columns: int
    design_frequency: float = DEFAULT_FREQUENCY
    spacing: Optional[float] = None

    def __post_init__(self):
        if self.columns < 1:
            raise ValueError("a tile needs at least one column")
        if self.spacing is None:
            object.__setattr__(self, "spacing", C / self.design_frequency / 2)
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")

    @property
    def key(self) -> str:
        return f"N{self.columns}-s{self.spacing:.9g}-f{self.design_frequency:.9g}"

    def to_dict(self) -> dict:
        return {"columns": self.columns, "spacing": self.spacing,
                "design_frequency": self.design_frequency}

    @classmethod
    def from_dict(cls, d: dict) -> "TileModel":
        return cls(int(d["columns"]), float(d["design_frequency"]), float(d["spacing"]))


@dataclass(frozen=True)
class SwitchConfig:
    bits: str
    quality: float = 0.0

    def __post_init__(self):
        if len(self.bits) % 2 or set(self.bits) - {"0", "1"}:
            raise ValueError(f"bad switch bit-string {self.bits!r}")

    @property
    def columns(self) -> int:
        return len(self.bits) // 2

    @property
    def array(self) -> np.ndarray:
        return np.frombuffer(self.bits.encode(), dtype=np.uint8) - ord("0")

    @classmethod
    def from_array(cls, bits: np.ndarray, quality: float = 0.0) -> "SwitchConfig":
        return cls("".join("1" if b else "0" for b in bits), float(quality))

    @classmethod
    def from_columns(cls, amplitude, phase, quality: float = 0.0) -> "SwitchConfig":
        return cls.from_array(np.concatenate([np.asarray(amplitude), np.asarray(phase)]), quality)

    def mirrored(self) -> "SwitchConfig":
        """Column order reversed (the config seen from the other tile end)."""
        n = self.columns
        return SwitchConfig(self.bits[:n][::-1] + self.bits[n:][::-1], self.quality)


@dataclass(frozen=True)
class Request:
    """What a tile must do, in tile-local radians.  ABSORB ignores both angles."""

    kind: FnKind
    theta_in: float = 0.0
    theta_target: float = 0.0

    def quantized(self, bin_deg: int = TABLE_BIN_DEG) -> "Request":
        if self.kind is FnKind.ABSORB:
            return Request(FnKind.ABSORB)
        return Request(self.kind,
                       math.radians(quantize_deg(self.theta_in, bin_deg)),
                       math.radians(quantize_deg(self.theta_target, bin_deg)))


def quantize_deg(angle: float, bin_deg: int = TABLE_BIN_DEG) -> int:
    return int(math.floor(math.degrees(angle) / bin_deg + 0.5)) * bin_deg


def request_for(fn: EmFunction, tile: Optional[Tile] = None) -> Request:
    """Translate a tile function into a compile request.

    FOCUS is compiled as steering toward the focal point as seen from the tile
    centre, so ``tile`` is required for it.
    """
    if fn.kind is FnKind.ABSORB:
        return Request(FnKind.ABSORB)
    if fn.kind is FnKind.SPECULAR:
        return Request(FnKind.SPECULAR, fn.incident_angle, -fn.incident_angle)
    if fn.kind is FnKind.STEER:
        return Request(FnKind.STEER, fn.incident_angle, fn.target_angle)
    if tile is None:
        raise ValueError("FOCUS requests need the tile geometry")
    return Request(FnKind.FOCUS, fn.incident_angle, tile.angle_to(fn.focus))


def _weights(bits: np.ndarray) -> np.ndarray:
    bits = np.asarray(bits)
    n = bits.shape[-1] // 2
    return bits[..., :n] * (1.0 - 2.0 * bits[..., n:])


def _steering(model: TileModel, theta_in: float, theta_out, f: float) -> np.ndarray:
    k = 2.0 * math.pi * f / C
    n = np.arange(model.columns)
    psi = k * model.spacing * (np.sin(np.atleast_1d(theta_out)) + math.sin(theta_in))
    return np.exp(1j * np.outer(n, psi))


def array_factor(model: TileModel, cfg: SwitchConfig, theta_in: float, theta_out: float,
                 f: float) -> complex:
    """Normalised complex reflection amplitude toward ``theta_out``."""
    if cfg.columns != model.columns:
        raise ValueError("config does not match the tile model")
    w = _weights(cfg.array)
    return complex(w @ _steering(model, theta_in, theta_out, f)[:, 0] / model.columns)


class _Scorer:
    """Vectorised quality of many bit-strings against one request."""

    def __init__(self, model: TileModel, request: Request, f: float):
        self.n = model.columns
        self.kind = request.kind
        self.grid = _steering(model, request.theta_in, GRID, f) / self.n
        self.target = _steering(model, request.theta_in, request.theta_target, f)[:, 0] / self.n
        full = np.abs(self.grid.sum(axis=0)) ** 2
        self.full_energy = float(full.sum())

    def __call__(self, bits: np.ndarray) -> np.ndarray:
        w = _weights(bits)
        energy = (np.abs(w @ self.grid) ** 2).sum(axis=-1)
        if self.kind is FnKind.ABSORB:
            q = 1.0 - energy / max(EPS_Q, self.full_energy)
        else:
            q = np.abs(w @ self.target) ** 2 / np.maximum(EPS_Q, energy)
        return np.clip(q, 0.0, 1.0)


def steering_quality(model: TileModel, cfg: SwitchConfig, theta_in: float, theta_target: float,
                     f: float) -> float:
    """Share of grid-sampled reflected power landing on ``theta_target`` (0 if dark)."""
    return float(_Scorer(model, Request(FnKind.STEER, theta_in, theta_target), f)(cfg.array))


def absorption_quality(model: TileModel, cfg: SwitchConfig, theta_in: float, f: float) -> float:
    """1 - reflected grid energy relative to the all-on, in-phase config."""
    return float(_Scorer(model, Request(FnKind.ABSORB, theta_in), f)(cfg.array))


def request_quality(model: TileModel, cfg: SwitchConfig, request: Request, f: float) -> float:
    return float(_Scorer(model, request, f)(cfg.array))


def main_lobe_deg(model: TileModel, cfg: SwitchConfig, theta_in: float, f: float,
                  near: Optional[float] = None) -> int:
    """Grid angle (deg) of the |AF| maximum.

    Binary phase profiles produce mirror-image twin lobes of equal height; with
    ``near`` the peak closest to that angle (deg) among the tied maxima wins.
    """
    mag = np.abs(_weights(cfg.array) @ _steering(model, theta_in, GRID, f))
    top = np.flatnonzero(mag >= mag.max() * (1 - 1e-9))
    if near is not None:
        return int(GRID_DEG[top[np.argmin(np.abs(GRID_DEG[top] - near))]])
    return int(GRID_DEG[top[0]])


def analytic_seed(model: TileModel, theta_in: float, theta_target: float, f: float) -> np.ndarray:
    """All columns on, phases quantised from the continuous gradient profile."""
    k = 2.0 * math.pi * f / C
    n = np.arange(model.columns)
    ideal = np.mod(-k * model.spacing * n * (math.sin(theta_target) + math.sin(theta_in)),
                   2.0 * math.pi)
    phase = np.mod(np.round(ideal / math.pi), 2).astype(np.uint8)
    return np.concatenate([np.ones(model.columns, dtype=np.uint8), phase])


def _codes_to_bits(codes: np.ndarray, length: int) -> np.ndarray:
    shifts = np.arange(length - 1, -1, -1)
    return ((codes[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def _exhaustive(score: _Scorer, length: int) -> tuple[np.ndarray, float]:
    best_q, best_bits = -1.0, None
    total = 1 << length
    chunk = 1 << 14
    for lo in range(0, total, chunk):
        bits = _codes_to_bits(np.arange(lo, min(total, lo + chunk)), length)
        q = score(bits)
        top = q.max()
        # codes run in lexicographic bit order, so first-max is the smallest bit-string
        if best_bits is None or top > best_q + _TIE:
            best_q = float(top)
            best_bits = bits[int(np.argmax(q >= top - _TIE))]
    return best_bits, best_q


def _genetic(score: _Scorer, length: int, seed_bits: np.ndarray, budget: int,
             rng: np.random.Generator) -> tuple[np.ndarray, float]:
    pop = rng.integers(0, 2, size=(POPULATION, length), dtype=np.uint8)
    pop[0] = seed_bits
    fit = score(pop)
    generations = budget // POPULATION
    mutation = 1.0 / length
    n_child = POPULATION - ELITES
    positions = np.arange(length)

    best_bits, best_q, best_key = None, -1.0, b""

    def consider(p, q):
        nonlocal best_bits, best_q, best_key
        top = float(q.max())
        if best_bits is not None and top < best_q - _TIE:
            return
        cand = np.flatnonzero(q >= top - _TIE)
        keys = [(p[i] + 48).tobytes() for i in cand]
        j = int(np.argmin(keys)) if len(keys) > 1 else 0
        if best_bits is None or top > best_q + _TIE or keys[j] < best_key:
            best_bits, best_q, best_key = p[cand[j]].copy(), top, keys[j]

    consider(pop, fit)
    for _ in range(1, generations):
        elite = np.argsort(-fit, kind="stable")[:ELITES]
        a = rng.integers(0, POPULATION, size=(n_child, TOURNAMENT))
        b = rng.integers(0, POPULATION, size=(n_child, TOURNAMENT))
        p1 = np.where(fit[a[:, 0]] >= fit[a[:, 1]], a[:, 0], a[:, 1])
        p2 = np.where(fit[b[:, 0]] >= fit[b[:, 1]], b[:, 0], b[:, 1])
        cross = rng.random(n_child) < CROSSOVER_P
        cut = rng.integers(1, length, size=n_child) if length > 1 else np.ones(n_child, dtype=int)
        take_first = (positions[None, :] < cut[:, None]) | ~cross[:, None]
        children = np.where(take_first, pop[p1], pop[p2])
        children ^= (rng.random((n_child, length)) < mutation).astype(np.uint8)
        pop = np.concatenate([pop[elite], children])
        fit = score(pop)
        consider(pop, fit)
    return best_bits, best_q


def compile(model: TileModel, fn: EmFunction | Request, f: float, budget: int = 20000, *,
            seed: int = 0, tile: Optional[Tile] = None) -> SwitchConfig:
    """Best switch configuration for ``fn`` found within ``budget`` evaluations.

    Exhaustive when all 2**(2N) configurations fit in the budget, otherwise a
    genetic search seeded with the analytic phase profile.  Ties go to the
    lexicographically smallest bit-string.
    """
    if budget < 1:
        raise BudgetTooSmall("budget must be at least 1")
    request = fn if isinstance(fn, Request) else request_for(fn, tile)
    length = 2 * model.columns
    score = _Scorer(model, request, f)
    if (1 << length) <= budget:
        bits, _ = _exhaustive(score, length)
    else:
        if budget < POPULATION:
            raise BudgetTooSmall(f"budget {budget} is below the GA population {POPULATION}")
        if request.kind is FnKind.ABSORB:
            seed_bits = np.zeros(length, dtype=np.uint8)
        else:
            seed_bits = analytic_seed(model, request.theta_in, request.theta_target, f)
        bits, _ = _genetic(score, length, seed_bits, budget, np.random.default_rng(seed))
    return SwitchConfig.from_array(bits, float(score(bits)))


@dataclass
class LookupTable:
    """Best known configurations for one tile model, keyed by quantised request."""

    model: TileModel
    entries: dict[tuple[str, int, Optional[int]], SwitchConfig] = field(default_factory=dict)
    bin_deg: int = TABLE_BIN_DEG

    def key(self, request: Request) -> tuple[str, int, Optional[int]]:
        if request.kind is FnKind.ABSORB:
            return (FnKind.ABSORB.value, 0, None)
        return (request.kind.value, quantize_deg(request.theta_in, self.bin_deg),
                quantize_deg(request.theta_target, self.bin_deg))

    def __len__(self) -> int:
        return len(self.entries)

    def to_dict(self) -> dict:
        entries = []
        for (kind, th_in, target), cfg in sorted(self.entries.items(),
                                                 key=lambda kv: (kv[0][0], kv[0][1], kv[0][2] or 0)):
            entries.append({"kind": kind, "theta_in_deg": th_in, "target": target,
                            "bits": cfg.bits, "quality": cfg.quality})
        return {"model": self.model.to_dict(), "bin_deg": self.bin_deg, "entries": entries}

    @classmethod
    def from_dict(cls, data: dict) -> "LookupTable":
        table = cls(TileModel.from_dict(data["model"]), bin_deg=int(data.get("bin_deg", TABLE_BIN_DEG)))
        for e in data.get("entries", []):
            key = (FnKind(e["kind"]).value, int(e["theta_in_deg"]),
                   None if e.get("target") is None else int(e["target"]))
            table.entries[key] = SwitchConfig(e["bits"], float(e["quality"]))
        return table


def table_get(table: LookupTable, request: Request,
              model: Optional[TileModel] = None) -> Optional[SwitchConfig]:
    if model is not None and model.key != table.model.key:
        raise ValueError(f"table holds model {table.model.key}, not {model.key}")
    return table.entries.get(table.key(request))


def table_put(table: LookupTable, request: Request, cfg: SwitchConfig,
              model: Optional[TileModel] = None) -> LookupTable:
    """Store ``cfg`` unless an entry of equal or higher quality exists."""
    if model is not None and model.key != table.model.key:
        raise ValueError(f"table holds model {table.model.key}, not {model.key}")
    key = table.key(request)
    current = table.entries.get(key)
    if current is None or cfg.quality > current.quality:
        table.entries[key] = cfg
    return table


def load_table(path: str | Path) -> LookupTable:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return LookupTable.from_dict(data)


def atomic_write(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_table(table: LookupTable, path: str | Path) -> None:
    atomic_write(path, json.dumps(table.to_dict(), indent=2, sort_keys=True) + "\n")
