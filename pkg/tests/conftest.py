import json
from pathlib import Path

import pytest

from pwenv.geometry import Device, Floorplan, Role, Wall

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for one acceptance criterion."""

    def record(number: int, title: str):
        _ACCEPTANCE[number] = (title, False, request.node.nodeid)
        request.node._criterion = number

    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item, "_criterion", None)
    if number is not None and rep.when == "call":
        title, _, node = _ACCEPTANCE[number]
        _ACCEPTANCE[number] = (title, rep.passed, node)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, ok, _ = _ACCEPTANCE[number]
        terminalreporter.write_line(f"AC{number:<3d} {'PASS' if ok else 'FAIL'}  {title}")


def room(width=10.0, height=8.0, devices=(), extra_walls=(), **kw) -> Floorplan:
    """Closed rectangular room with coated walls, counter-clockwise from the origin."""
    walls = [
        Wall(0, (0.0, 0.0), (width, 0.0)),
        Wall(1, (width, 0.0), (width, height)),
        Wall(2, (width, height), (0.0, height)),
        Wall(3, (0.0, height), (0.0, 0.0)),
    ]
    walls.extend(extra_walls)
    return Floorplan.build(walls, list(devices), interior_point=(width / 2 + 0.01, height / 2 + 0.013),
                           **kw)


def dev(name, x, y, role=Role.RX, **kw) -> Device:
    return Device(name, (float(x), float(y)), role, **kw)


def write_scenario(path: Path, data: dict) -> Path:
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


@pytest.fixture
def office_data() -> dict:
    return {
        "tile_size": 0.5, "columns_per_tile": 8, "interior_point": [5, 4],
        "walls": [{"id": 0, "a": [0, 0], "b": [10, 0]}, {"id": 1, "a": [10, 0], "b": [10, 8]},
                  {"id": 2, "a": [10, 8], "b": [0, 8]}, {"id": 3, "a": [0, 8], "b": [0, 0]}],
        "devices": [{"id": "AP", "position": [1, 1], "role": "TX"},
                    {"id": "laptop", "position": [8, 6], "role": "RX"},
                    {"id": "phone", "position": [2, 6], "role": "RX"},
                    {"id": "eve", "position": [5, 4], "role": "EAVESDROPPER"},
                    {"id": "sensor", "position": [9, 2], "role": "RX"},
                    {"id": "rogue", "position": [6, 1.5], "role": "BLOCKED"}],
        "objectives": [{"kind": "LINK_OPTIMIZE", "src": "AP", "dst": "laptop"},
                       {"kind": "SECURE_LINK", "src": "AP", "dst": "phone", "avoid_radius": 1.0},
                       {"kind": "POWER_TRANSFER", "src": "AP", "dst": "sensor"},
                       {"kind": "BLOCK", "src": "rogue"}],
    }
