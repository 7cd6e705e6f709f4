"""Simulation and control of indoor environments coated with programmable metasurface tiles."""

from .errors import (BackFaceHit, BudgetTooSmall, EmptyObject, HashMismatch, NoPathError,
                     ParseError, PartitionError, PwenvError, ValidationError)
from .geometry import Device, Floorplan, Role, Tile, Wall, load_scenario, tessellate
from .propagation import EmFunction, FnKind, free_space_loss, launch, received_power

__version__ = "0.1.0"

__all__ = [
    "BackFaceHit", "BudgetTooSmall", "EmptyObject", "HashMismatch", "NoPathError", "ParseError",
    "PartitionError", "PwenvError", "ValidationError", "Device", "Floorplan", "Role", "Tile", "Wall",
    "load_scenario", "tessellate", "EmFunction", "FnKind", "free_space_loss", "launch", "received_power",
]
